//! Curriculum scheduling and contextual rendering.
//!
//! Module files are plain text: a front-matter block with `id`, `title` and
//! `offset` (days after curriculum start), then a body template using
//! `{{slot_name}}` placeholders.
//!
//! ```text
//! ---
//! id: internet-basics
//! title: Internet basics
//! offset: 0
//! ---
//! Your household mostly talked to: {{top_companies}}.
//! ```

mod slots;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage::StageConfig;
use crate::time::DAY_MS;

pub use slots::{
    slot_names, substitute, ContextData, ContextExample, EncryptionPartition, ENCRYPTED_VS_PLAINTEXT,
    JURISDICTION_COUNT, SLOTS, TOP_COMPANIES, TOP_COMPANIES_N,
};

const SAMPLE_MODULES: [&str; 6] = [
    include_str!("../../assets/curriculum/01-internet-basics.md"),
    include_str!("../../assets/curriculum/02-how-devices-send-data.md"),
    include_str!("../../assets/curriculum/03-data-breaches.md"),
    include_str!("../../assets/curriculum/04-data-protection.md"),
    include_str!("../../assets/curriculum/05-privacy-risks.md"),
    include_str!("../../assets/curriculum/06-taking-control.md"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TutorError {
    #[error("module file {source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("unknown slot {{{{{0}}}}}")]
    UnknownSlot(String),
    #[error("no curriculum module {0:?}")]
    UnknownModule(String),
    #[error("module {id:?} is not due yet")]
    NotDue { id: String, due_at_ms: Option<i64> },
    #[error("duplicate module id {0:?}")]
    DuplicateModule(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumModule {
    pub id: String,
    pub title: String,
    pub body_template: String,
    pub stage_offset_days: u32,
    pub completed_at_ms: Option<i64>,
}

impl CurriculumModule {
    /// Parses a module file. Every slot must be a built-in.
    pub fn parse(source_name: &str, text: &str) -> Result<Self, TutorError> {
        let err = |message: String| TutorError::Parse {
            source_name: source_name.to_owned(),
            message,
        };
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("---") {
            return Err(err("missing front-matter opening ---".into()));
        }
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        let mut closed = false;
        for line in lines.by_ref() {
            if line.trim() == "---" {
                closed = true;
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| err(format!("front-matter line {line:?} is not key: value")))?;
            fields.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        if !closed {
            return Err(err("front-matter is not closed with ---".into()));
        }
        let take = |k: &str| {
            fields
                .get(k)
                .filter(|v| !v.is_empty())
                .cloned()
                .ok_or_else(|| err(format!("missing {k}")))
        };
        let id = take("id")?;
        let title = take("title")?;
        let offset: u32 = take("offset")?
            .parse()
            .map_err(|_| err("offset must be a whole number of days".into()))?;
        let body_template = lines.collect::<Vec<_>>().join("\n").trim().to_owned();
        for slot in slot_names(&body_template) {
            if !SLOTS.contains(&slot.as_str()) {
                return Err(TutorError::UnknownSlot(slot));
            }
        }
        Ok(Self {
            id,
            title,
            body_template,
            stage_offset_days: offset,
            completed_at_ms: None,
        })
    }

    /// When the module becomes due, if the curriculum has started.
    pub fn due_at_ms(&self, stage: &StageConfig) -> Option<i64> {
        stage
            .curriculum_anchor_ms()
            .map(|a| a + self.stage_offset_days as i64 * DAY_MS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedModule {
    pub id: String,
    pub title: String,
    pub body: String,
    pub examples: Vec<ContextExample>,
}

/// Lists modules due at `now_ms`: none before stage 2; afterwards every
/// uncompleted module whose offset has elapsed since curriculum start,
/// ordered by offset then id.
pub fn schedule<'a>(
    stage: &StageConfig,
    now_ms: i64,
    modules: impl IntoIterator<Item = &'a CurriculumModule>,
) -> Vec<String> {
    let mut due: Vec<&CurriculumModule> = modules
        .into_iter()
        .filter(|m| m.completed_at_ms.is_none())
        .filter(|m| m.due_at_ms(stage).is_some_and(|t| t <= now_ms))
        .collect();
    due.sort_by(|a, b| {
        a.stage_offset_days
            .cmp(&b.stage_offset_days)
            .then_with(|| a.id.cmp(&b.id))
    });
    due.into_iter().map(|m| m.id.clone()).collect()
}

/// Fills every slot of `module` from `ctx`.
pub fn render(module: &CurriculumModule, ctx: &ContextData) -> Result<RenderedModule, TutorError> {
    let mut examples: Vec<ContextExample> = Vec::new();
    let body = substitute(&module.body_template, |slot| {
        let ex = ctx.fill(slot)?;
        let text = ex.text.clone();
        if !examples.iter().any(|e| e.slot == ex.slot) {
            examples.push(ex);
        }
        Some(text)
    })
    .map_err(TutorError::UnknownSlot)?;
    Ok(RenderedModule {
        id: module.id.clone(),
        title: module.title.clone(),
        body,
        examples,
    })
}

/// The household's single curriculum track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Curriculum {
    modules: BTreeMap<String, CurriculumModule>,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self::sample()
    }
}

impl Curriculum {
    pub fn new(modules: impl IntoIterator<Item = CurriculumModule>) -> Result<Self, TutorError> {
        let mut map = BTreeMap::new();
        for m in modules {
            if map.contains_key(&m.id) {
                return Err(TutorError::DuplicateModule(m.id));
            }
            map.insert(m.id.clone(), m);
        }
        Ok(Self { modules: map })
    }

    /// The six bundled modules, offsets 0, 2, 4, 6, 8 and 10 days.
    pub fn sample() -> Self {
        let modules = SAMPLE_MODULES
            .iter()
            .enumerate()
            .map(|(i, text)| CurriculumModule::parse(&format!("sample-{i}"), text).expect("bundled module is valid"));
        Self::new(modules).expect("bundled ids are unique")
    }

    /// Loads every `*.md` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TutorError> {
        let io = |e: std::io::Error| TutorError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "md"))
            .collect();
        paths.sort();
        let mut modules = Vec::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(io)?;
            modules.push(CurriculumModule::parse(&p.display().to_string(), &text)?);
        }
        Self::new(modules)
    }

    pub fn modules(&self) -> impl Iterator<Item = &CurriculumModule> {
        self.modules.values()
    }

    pub fn get(&self, id: &str) -> Result<&CurriculumModule, TutorError> {
        self.modules
            .get(id)
            .ok_or_else(|| TutorError::UnknownModule(id.to_owned()))
    }

    pub fn due(&self, stage: &StageConfig, now_ms: i64) -> Vec<String> {
        schedule(stage, now_ms, self.modules.values())
    }

    /// Records completion. Completing twice keeps the first timestamp;
    /// completing a module that is not yet due is an error.
    pub fn mark_complete(
        &mut self,
        id: &str,
        stage: &StageConfig,
        now_ms: i64,
    ) -> Result<CurriculumModule, TutorError> {
        let m = self
            .modules
            .get_mut(id)
            .ok_or_else(|| TutorError::UnknownModule(id.to_owned()))?;
        if m.completed_at_ms.is_some() {
            return Ok(m.clone());
        }
        let due_at = m.due_at_ms(stage);
        if due_at.is_none_or(|t| t > now_ms) {
            return Err(TutorError::NotDue {
                id: id.to_owned(),
                due_at_ms: due_at,
            });
        }
        m.completed_at_ms = Some(now_ms);
        Ok(m.clone())
    }

    /// Restores persisted completion state; unknown ids are ignored.
    pub fn restore_completion(&mut self, id: &str, at_ms: i64) {
        if let Some(m) = self.modules.get_mut(id) {
            m.completed_at_ms.get_or_insert(at_ms);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage::Stage;
    use proptest::prelude::*;

    fn module(id: &str, offset: u32) -> CurriculumModule {
        CurriculumModule {
            id: id.into(),
            title: id.into(),
            body_template: String::new(),
            stage_offset_days: offset,
            completed_at_ms: None,
        }
    }

    fn stage2_from(start: i64) -> StageConfig {
        let mut s = StageConfig::new(0);
        s.transition(Stage::Curriculum, start, false).unwrap();
        s
    }

    #[test]
    fn samples_load_with_expected_offsets() {
        let c = Curriculum::sample();
        let mut offsets: Vec<u32> = c.modules().map(|m| m.stage_offset_days).collect();
        offsets.sort();
        assert_eq!(offsets, [0, 2, 4, 6, 8, 10]);
    }

    #[test]
    fn schedule_examples() {
        let mods = [module("a", 0), module("b", 3), module("c", 7)];
        assert!(schedule(&StageConfig::new(0), 100 * DAY_MS, &mods).is_empty());
        let s = stage2_from(DAY_MS);
        assert_eq!(schedule(&s, DAY_MS, &mods), ["a"]);
        assert_eq!(schedule(&s, 9 * DAY_MS, &mods), ["a", "b", "c"]);
    }

    #[test]
    fn skipping_to_stage_three_starts_curriculum() {
        let mods = [module("a", 0)];
        let s = StageConfig::at(Stage::Controls, 5);
        assert_eq!(schedule(&s, 5, &mods), ["a"]);
    }

    #[test]
    fn completion_rules() {
        let mut c = Curriculum::new([module("a", 0), module("b", 3)]).unwrap();
        let s = stage2_from(0);
        let first = c.mark_complete("a", &s, 10).unwrap();
        assert_eq!(first.completed_at_ms, Some(10));
        assert_eq!(c.mark_complete("a", &s, 20).unwrap().completed_at_ms, Some(10));
        assert!(c.due(&s, 10).is_empty());
        assert!(matches!(c.mark_complete("b", &s, 10), Err(TutorError::NotDue { .. })));
        assert!(matches!(
            c.mark_complete("zzz", &s, 10),
            Err(TutorError::UnknownModule(_))
        ));
        assert!(matches!(
            c.mark_complete("b", &StageConfig::new(0), 100 * DAY_MS),
            Err(TutorError::NotDue { due_at_ms: None, .. })
        ));
    }

    #[test]
    fn parse_errors() {
        assert!(CurriculumModule::parse("x", "no front matter").is_err());
        assert!(CurriculumModule::parse("x", "---\nid: a\ntitle: A\n---\n").is_err());
        assert!(CurriculumModule::parse("x", "---\nid: a\ntitle: A\noffset: x\n---\n").is_err());
        assert_eq!(
            CurriculumModule::parse("x", "---\nid: a\ntitle: A\noffset: 1\n---\n{{bogus}}"),
            Err(TutorError::UnknownSlot("bogus".into()))
        );
    }

    #[test]
    fn render_unknown_slot_names_it() {
        let mut m = module("a", 0);
        m.body_template = "hello {{mystery}}".into();
        let ctx = ContextData {
            window: crate::time::TimeWindow::all(),
            encryption: Default::default(),
            companies: vec![],
            jurisdictions: Default::default(),
        };
        let err = render(&m, &ctx).unwrap_err();
        assert_eq!(err, TutorError::UnknownSlot("mystery".into()));
        assert!(err.to_string().contains("{{mystery}}"));
    }

    #[test]
    fn load_dir_reads_md_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.md"),
            "---\nid: a\ntitle: A\noffset: 1\n---\nbody {{top_companies}}",
        )
        .unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let c = Curriculum::load_dir(dir.path()).unwrap();
        assert_eq!(c.modules().count(), 1);
    }

    proptest! {
        #[test]
        fn stage_one_is_silent(now in any::<i64>(), offsets in prop::collection::vec(0u32..30, 0..8)) {
            let mods: Vec<_> = offsets.iter().enumerate().map(|(i, o)| module(&i.to_string(), *o)).collect();
            prop_assert!(schedule(&StageConfig::new(0), now, &mods).is_empty());
        }
    }
}
