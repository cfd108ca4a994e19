//! File-backed persistence with redaction and retention.
//!
//! On-disk layout of a data directory:
//!
//! ```text
//! <data>/journal.jsonl   append-only state journal, compacted on redaction and sweep
//! <data>/audit.jsonl     redaction audit log, append-only, never rewritten
//! ```
//!
//! The MAC salt lives outside the data directory (see [`salt`]), so a copied
//! data directory cannot be joined back to hardware addresses.
//!
//! Every journal line is one JSON object tagged by `kind`. The first line is a
//! header naming the schema version. Live appends are `flow`, `device`,
//! `device_removed`, `company` and `meta` lines. Compaction rewrites the file
//! as a snapshot: buckets are written as `bucket` lines and the flows behind
//! them as `archived` lines, so that buckets outlive the raw flows that a
//! retention sweep removes. Compaction writes a temporary file and renames it
//! over the journal, so a crash leaves either the old or the new state.
//!
//! A truncated final line (a crash mid-append) is dropped on open; any other
//! malformed line is an error.

mod export;
mod redact;
pub mod salt;

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exposure::{AddOutcome, ExposureBucket, ExposureError, ExposureModel};
use crate::flowcap::{Device, DeviceId, FlowId, FlowRecord};
use crate::resolver::{CompanyRecord, Jurisdiction, RecordSource, ThreatStatus};
use crate::time::{TimeWindow, DAY_MS, MINUTE_MS};

pub use export::{ImportSummary, FLOW_EXPORT_SCHEMA, FLOW_EXPORT_VERSION};
pub use redact::{RedactionRequest, RedactionScope};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const JOURNAL_SCHEMA: &str = "hearth-store";
pub const JOURNAL_VERSION: u32 = 1;
/// Raw flows older than this are removed by the default sweep.
pub const DEFAULT_RETENTION_MS: i64 = 42 * DAY_MS;
/// How long writes into a redacted scope keep being refused.
pub const DEFAULT_REDACTION_GRACE_MS: i64 = 5 * MINUTE_MS;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("storage full: {limit} flows stored")]
    Full { limit: usize },
    #[error("flow {0} is already stored")]
    Duplicate(FlowId),
    #[error("flow {0} falls in a recently redacted scope")]
    Redacted(FlowId),
    #[error("invalid redaction scope: {0}")]
    InvalidScope(String),
    #[error("retention age must be positive, got {0} ms")]
    BadRetention(i64),
    #[error("import rejected: {0}")]
    Import(String),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
}

impl StoreError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
        move |source| StoreError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreConfig {
    /// Refuse new flows beyond this many stored raw flows.
    pub max_flows: usize,
    pub redaction_grace_ms: i64,
    pub bucket_width_ms: i64,
    pub include_inbound: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            max_flows: 5_000_000,
            redaction_grace_ms: DEFAULT_REDACTION_GRACE_MS,
            bucket_width_ms: crate::exposure::STORAGE_WIDTH_MS,
            include_inbound: false,
        }
    }
}

/// A flow together with the company it was attributed to at ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredFlow {
    #[serde(flatten)]
    pub record: FlowRecord,
    pub company: String,
    pub jurisdiction: Jurisdiction,
}

impl StoredFlow {
    pub fn new(record: FlowRecord, company: &CompanyRecord) -> Self {
        Self {
            record,
            company: company.name.clone(),
            jurisdiction: company.jurisdiction.clone(),
        }
    }

    /// The attribution as a minimal company record for bucketing.
    fn attribution(&self) -> CompanyRecord {
        CompanyRecord {
            name: self.company.clone(),
            parent: None,
            jurisdiction: self.jurisdiction.clone(),
            threat: ThreatStatus::Unknown,
            source: RecordSource::Manual,
            resolved_at_ms: 0,
            ttl_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowQuery {
    pub device: Option<DeviceId>,
    pub company: Option<String>,
    pub window: Option<TimeWindow>,
}

impl FlowQuery {
    pub fn matches(&self, f: &StoredFlow) -> bool {
        self.device.as_ref().is_none_or(|d| &f.record.device_id == d)
            && self.company.as_ref().is_none_or(|c| &f.company == c)
            && self.window.is_none_or(|w| w.contains(f.record.window_start_ms))
    }
}

/// A scope that refuses writes until `until_ms`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub scope: RedactionScope,
    pub until_ms: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Entry {
    Header { schema: String, version: u32 },
    Flow(StoredFlow),
    Archived(StoredFlow),
    Bucket(ExposureBucket),
    Seen { ids: Vec<FlowId> },
    Device(Device),
    DeviceRemoved { device_id: DeviceId },
    Company(CompanyRecord),
    Meta { key: String, value: serde_json::Value },
    Tombstone(Tombstone),
}

/// Everything the journal describes; cloned to stage atomic rewrites.
#[derive(Debug, Clone)]
struct State {
    flows: Vec<StoredFlow>,
    ids: HashSet<FlowId>,
    exposure: ExposureModel,
    devices: BTreeMap<DeviceId, Device>,
    companies: BTreeMap<String, CompanyRecord>,
    meta: BTreeMap<String, serde_json::Value>,
    tombstones: Vec<Tombstone>,
}

impl State {
    fn new(config: &StoreConfig) -> Self {
        Self {
            flows: Vec::new(),
            ids: HashSet::new(),
            exposure: ExposureModel::new(config.bucket_width_ms, config.include_inbound),
            devices: BTreeMap::new(),
            companies: BTreeMap::new(),
            meta: BTreeMap::new(),
            tombstones: Vec::new(),
        }
    }

    fn apply(&mut self, entry: Entry) -> Result<Option<AddOutcome>, StoreError> {
        match entry {
            Entry::Header { .. } => {}
            Entry::Flow(f) => {
                let outcome = self.exposure.add_flow(&f.record, &f.attribution())?;
                self.ids.insert(f.record.id.clone());
                self.flows.push(f);
                return Ok(Some(outcome));
            }
            Entry::Archived(f) => {
                self.exposure.restore_seen([f.record.id.clone()]);
                self.ids.insert(f.record.id.clone());
                self.flows.push(f);
            }
            Entry::Bucket(b) => self.exposure.restore_bucket(&b)?,
            Entry::Seen { ids } => self.exposure.restore_seen(ids),
            Entry::Device(d) => {
                self.devices.insert(d.device_id.clone(), d);
            }
            Entry::DeviceRemoved { device_id } => {
                self.devices.remove(&device_id);
            }
            Entry::Company(c) => {
                self.companies.insert(c.name.clone(), c);
            }
            Entry::Meta { key, value } => {
                self.meta.insert(key, value);
            }
            Entry::Tombstone(t) => self.tombstones.push(t),
        }
        Ok(None)
    }

    /// The journal lines that recreate this state.
    fn snapshot(&self, now_ms: i64) -> Vec<Entry> {
        let mut out = vec![Entry::Header {
            schema: JOURNAL_SCHEMA.into(),
            version: JOURNAL_VERSION,
        }];
        out.extend(self.meta.iter().map(|(k, v)| Entry::Meta {
            key: k.clone(),
            value: v.clone(),
        }));
        out.extend(self.devices.values().cloned().map(Entry::Device));
        out.extend(self.companies.values().cloned().map(Entry::Company));
        out.extend(self.exposure.all_buckets().into_iter().map(Entry::Bucket));
        out.extend(self.flows.iter().cloned().map(Entry::Archived));
        let forgotten: Vec<FlowId> = self
            .exposure
            .seen_ids()
            .filter(|id| !self.ids.contains(*id))
            .cloned()
            .collect();
        if !forgotten.is_empty() {
            out.push(Entry::Seen { ids: forgotten });
        }
        out.extend(
            self.tombstones
                .iter()
                .filter(|t| t.until_ms > now_ms)
                .cloned()
                .map(Entry::Tombstone),
        );
        out
    }

    fn refused(&self, f: &StoredFlow, now_ms: i64) -> bool {
        self.tombstones
            .iter()
            .any(|t| t.until_ms > now_ms && t.scope.covers(f, self.exposure.storage_width_ms()))
    }
}

#[derive(Debug)]
struct Files {
    dir: PathBuf,
    journal: BufWriter<File>,
}

/// The household's durable state. One writer at a time (`&mut self`); wrap
/// in a lock to share with readers.
#[derive(Debug)]
pub struct Store {
    config: StoreConfig,
    state: State,
    audit: Vec<RedactionRequest>,
    files: Option<Files>,
}

impl Store {
    /// A store that never touches disk.
    pub fn in_memory(config: StoreConfig) -> Self {
        Self {
            state: State::new(&config),
            config,
            audit: Vec::new(),
            files: None,
        }
    }

    /// Opens (creating if needed) the data directory and replays it.
    pub fn open(dir: &Path, config: StoreConfig) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(StoreError::io(dir))?;
        let journal_path = dir.join(JOURNAL_FILE);
        let mut state = State::new(&config);
        let fresh = !journal_path.exists();
        if !fresh {
            for entry in read_lines::<Entry>(&journal_path)? {
                let (line, entry) = entry?;
                if let Entry::Header { schema, version } = &entry {
                    if schema != JOURNAL_SCHEMA || *version != JOURNAL_VERSION {
                        return Err(StoreError::Corrupt {
                            path: journal_path,
                            line,
                            message: format!("unsupported journal {schema} version {version}"),
                        });
                    }
                }
                state.apply(entry).map_err(|e| StoreError::Corrupt {
                    path: journal_path.clone(),
                    line,
                    message: e.to_string(),
                })?;
            }
        }
        let audit_path = dir.join(AUDIT_FILE);
        let mut audit = Vec::new();
        if audit_path.exists() {
            for r in read_lines::<RedactionRequest>(&audit_path)? {
                audit.push(r?.1);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal_path)
            .map_err(StoreError::io(&journal_path))?;
        let mut store = Self {
            config,
            state,
            audit,
            files: Some(Files {
                dir: dir.to_owned(),
                journal: BufWriter::new(file),
            }),
        };
        if fresh {
            store.append(&Entry::Header {
                schema: JOURNAL_SCHEMA.into(),
                version: JOURNAL_VERSION,
            })?;
            store.flush()?;
        }
        Ok(store)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn dir(&self) -> Option<&Path> {
        self.files.as_ref().map(|f| f.dir.as_path())
    }

    fn append(&mut self, entry: &Entry) -> Result<(), StoreError> {
        if let Some(files) = &mut self.files {
            let path = files.dir.join(JOURNAL_FILE);
            serde_json::to_writer(&mut files.journal, entry).map_err(|e| StoreError::io(&path)(e.into()))?;
            files.journal.write_all(b"\n").map_err(StoreError::io(&path))?;
        }
        Ok(())
    }

    /// Pushes buffered journal lines to the operating system.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(files) = &mut self.files {
            let path = files.dir.join(JOURNAL_FILE);
            files.journal.flush().map_err(StoreError::io(&path))?;
        }
        Ok(())
    }

    /// Stores one flow and folds it into the exposure model. Journal lines are
    /// buffered; call [`Store::flush`] at the end of a batch.
    pub fn persist_flow(&mut self, flow: StoredFlow, now_ms: i64) -> Result<AddOutcome, StoreError> {
        if self.state.ids.contains(&flow.record.id) || self.state.exposure.has_seen(&flow.record.id) {
            return Err(StoreError::Duplicate(flow.record.id));
        }
        if self.state.refused(&flow, now_ms) {
            return Err(StoreError::Redacted(flow.record.id));
        }
        if self.state.flows.len() >= self.config.max_flows {
            return Err(StoreError::Full {
                limit: self.config.max_flows,
            });
        }
        let entry = Entry::Flow(flow);
        self.append(&entry)?;
        Ok(self.state.apply(entry)?.expect("flow entries report an outcome"))
    }

    pub fn flow(&self, id: &FlowId) -> Option<&StoredFlow> {
        if !self.state.ids.contains(id) {
            return None;
        }
        self.state.flows.iter().find(|f| &f.record.id == id)
    }

    /// Matching flows in storage order.
    pub fn query_flows(&self, q: &FlowQuery) -> Vec<StoredFlow> {
        self.state.flows.iter().filter(|f| q.matches(f)).cloned().collect()
    }

    pub fn flows(&self) -> impl Iterator<Item = &StoredFlow> {
        self.state.flows.iter()
    }

    pub fn flow_count(&self) -> usize {
        self.state.flows.len()
    }

    pub fn exposure(&self) -> &ExposureModel {
        &self.state.exposure
    }

    pub fn put_device(&mut self, device: Device) -> Result<(), StoreError> {
        if self.state.devices.get(&device.device_id) == Some(&device) {
            return Ok(());
        }
        let entry = Entry::Device(device);
        self.append(&entry)?;
        self.state.apply(entry)?;
        Ok(())
    }

    pub fn devices(&self) -> impl Iterator<Item = &Device> {
        self.state.devices.values()
    }

    pub fn device(&self, id: &DeviceId) -> Option<&Device> {
        self.state.devices.get(id)
    }

    pub fn put_company(&mut self, company: CompanyRecord) -> Result<(), StoreError> {
        if self.state.companies.get(&company.name) == Some(&company) {
            return Ok(());
        }
        let entry = Entry::Company(company);
        self.append(&entry)?;
        self.state.apply(entry)?;
        Ok(())
    }

    pub fn companies(&self) -> impl Iterator<Item = &CompanyRecord> {
        self.state.companies.values()
    }

    pub fn company(&self, name: &str) -> Option<&CompanyRecord> {
        self.state.companies.get(name)
    }

    /// Stores a small piece of named state (stage, directives, curriculum).
    pub fn put_meta<T: Serialize>(&mut self, key: &str, value: &T) -> Result<(), StoreError> {
        let value = serde_json::to_value(value).map_err(|e| StoreError::Corrupt {
            path: PathBuf::from(key),
            line: 0,
            message: e.to_string(),
        })?;
        let entry = Entry::Meta {
            key: key.to_owned(),
            value,
        };
        self.append(&entry)?;
        self.state.apply(entry)?;
        self.flush()
    }

    /// Reads named state; a value that no longer parses reads as absent.
    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Option<T> {
        self.state
            .meta
            .get(key)
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    pub fn tombstones(&self) -> &[Tombstone] {
        &self.state.tombstones
    }

    /// Rewrites the journal from `state` and makes it current. Either both the
    /// file and memory change, or neither does.
    fn commit(&mut self, state: State, now_ms: i64) -> Result<(), StoreError> {
        if let Some(files) = &mut self.files {
            let path = files.dir.join(JOURNAL_FILE);
            files.journal.flush().map_err(StoreError::io(&path))?;
            let tmp = files.dir.join(format!("{JOURNAL_FILE}.tmp"));
            {
                let f = File::create(&tmp).map_err(StoreError::io(&tmp))?;
                let mut w = BufWriter::new(f);
                for entry in state.snapshot(now_ms) {
                    serde_json::to_writer(&mut w, &entry).map_err(|e| StoreError::io(&tmp)(e.into()))?;
                    w.write_all(b"\n").map_err(StoreError::io(&tmp))?;
                }
                let f = w.into_inner().map_err(|e| StoreError::io(&tmp)(e.into_error()))?;
                f.sync_all().map_err(StoreError::io(&tmp))?;
            }
            std::fs::rename(&tmp, &path).map_err(StoreError::io(&path))?;
            let file = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(StoreError::io(&path))?;
            files.journal = BufWriter::new(file);
        }
        self.state = state;
        Ok(())
    }

    /// Rewrites the journal as a snapshot of the current state.
    pub fn compact(&mut self, now_ms: i64) -> Result<(), StoreError> {
        let state = self.state.clone();
        self.commit(state, now_ms)
    }

    /// Removes raw flows whose window started more than `max_age_ms` before
    /// `now_ms`. Exposure buckets are kept, so totals stay the same while
    /// per-flow detail for old periods is gone. Returns the flows removed.
    pub fn retention_sweep(&mut self, max_age_ms: i64, now_ms: i64) -> Result<u64, StoreError> {
        if max_age_ms <= 0 {
            return Err(StoreError::BadRetention(max_age_ms));
        }
        let cutoff = now_ms.saturating_sub(max_age_ms);
        let stale = self
            .state
            .flows
            .iter()
            .filter(|f| f.record.window_start_ms < cutoff)
            .count();
        if stale == 0 {
            return Ok(0);
        }
        let mut state = self.state.clone();
        state.flows.retain(|f| f.record.window_start_ms >= cutoff);
        state.ids = state.flows.iter().map(|f| f.record.id.clone()).collect();
        self.commit(state, now_ms)?;
        Ok(stale as u64)
    }
}

/// Reads a JSON-lines file, tolerating a truncated last line.
fn read_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<(usize, T), StoreError>>, StoreError> {
    let file = File::open(path).map_err(StoreError::io(path))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(StoreError::io(path))?;
    let last = lines.len();
    let path = path.to_owned();
    Ok(lines
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .filter_map(move |(i, l)| match serde_json::from_str::<T>(&l) {
            Ok(v) => Some(Ok((i + 1, v))),
            Err(e) if i + 1 == last && e.is_eof() => {
                tracing::warn!(path = %path.display(), "dropping truncated final journal line");
                None
            }
            Err(e) => Some(Err(StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })),
        }))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::exposure::tests::{company, flow};
    use crate::exposure::SeriesFilter;

    pub(crate) fn stored(id: &str, device: &str, dst: &str, start: i64, bytes: u64, co: &str) -> StoredFlow {
        StoredFlow::new(flow(id, device, dst, start, bytes), &company(co, "US"))
    }

    #[test]
    fn write_then_query_round_trips() {
        let mut s = Store::in_memory(StoreConfig::default());
        let f = stored("f1", "d", "1.1.1.1", 0, 10, "A");
        s.persist_flow(f.clone(), 0).unwrap();
        assert_eq!(s.flow(&f.record.id), Some(&f));
        let empty = FlowQuery {
            window: Some(TimeWindow::new(10 * DAY_MS, 11 * DAY_MS).unwrap()),
            ..Default::default()
        };
        assert!(s.query_flows(&empty).is_empty());
        assert!(matches!(s.persist_flow(f, 0), Err(StoreError::Duplicate(_))));
    }

    #[test]
    fn thousand_writes() {
        let mut s = Store::in_memory(StoreConfig::default());
        for i in 0..1000 {
            s.persist_flow(stored(&i.to_string(), "d", "1.1.1.1", i * 1000, 1, "A"), 0)
                .unwrap();
        }
        assert_eq!(s.query_flows(&FlowQuery::default()).len(), 1000);
    }

    #[test]
    fn full_store_refuses() {
        let mut s = Store::in_memory(StoreConfig {
            max_flows: 2,
            ..Default::default()
        });
        s.persist_flow(stored("1", "d", "1.1.1.1", 0, 1, "A"), 0).unwrap();
        s.persist_flow(stored("2", "d", "1.1.1.1", 0, 1, "A"), 0).unwrap();
        assert!(matches!(
            s.persist_flow(stored("3", "d", "1.1.1.1", 0, 1, "A"), 0),
            Err(StoreError::Full { limit: 2 })
        ));
    }

    #[test]
    fn reopen_replays_journal() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path(), StoreConfig::default()).unwrap();
            s.persist_flow(stored("1", "d", "1.1.1.1", 0, 5, "A"), 0).unwrap();
            s.put_meta("stage", &2u8).unwrap();
            s.flush().unwrap();
        }
        let s = Store::open(dir.path(), StoreConfig::default()).unwrap();
        assert_eq!(s.flow_count(), 1);
        assert_eq!(s.meta::<u8>("stage"), Some(2));
        assert_eq!(
            s.exposure().total_bytes(&SeriesFilter::default(), &TimeWindow::all()),
            5
        );
    }

    #[test]
    fn truncated_tail_is_dropped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Store::open(dir.path(), StoreConfig::default()).unwrap();
            s.persist_flow(stored("1", "d", "1.1.1.1", 0, 5, "A"), 0).unwrap();
            s.flush().unwrap();
        }
        let path = dir.path().join(JOURNAL_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"kind\":\"flow\",\"id\":");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(Store::open(dir.path(), StoreConfig::default()).unwrap().flow_count(), 1);

        let intact = text.rsplit_once("{\"kind\":\"flow\",\"id\":").unwrap().0;
        std::fs::write(&path, format!("{intact}garbage\n{{}}")).unwrap();
        assert!(matches!(
            Store::open(dir.path(), StoreConfig::default()),
            Err(StoreError::Corrupt { line: 3, .. })
        ));
    }

    #[test]
    fn sweep_examples() {
        let now = 100 * DAY_MS;
        let mut s = Store::in_memory(StoreConfig::default());
        assert!(matches!(s.retention_sweep(0, now), Err(StoreError::BadRetention(0))));
        s.persist_flow(stored("new", "d", "1.1.1.1", now - DAY_MS, 5, "A"), now)
            .unwrap();
        assert_eq!(s.retention_sweep(DEFAULT_RETENTION_MS, now).unwrap(), 0);
        s.persist_flow(stored("old", "d", "1.1.1.1", now - 50 * DAY_MS, 7, "A"), now)
            .unwrap();
        let before = s.exposure().profile(&TimeWindow::all());
        assert_eq!(s.retention_sweep(DEFAULT_RETENTION_MS, now).unwrap(), 1);
        assert_eq!(s.flow_count(), 1);
        assert_eq!(s.exposure().profile(&TimeWindow::all()), before);
        // A swept flow is still remembered and cannot be double counted.
        assert!(matches!(
            s.persist_flow(stored("old", "d", "1.1.1.1", now - 50 * DAY_MS, 7, "A"), now),
            Err(StoreError::Duplicate(_))
        ));
    }

    #[test]
    fn sweep_survives_reopen_with_buckets_intact() {
        let dir = tempfile::tempdir().unwrap();
        let now = 100 * DAY_MS;
        {
            let mut s = Store::open(dir.path(), StoreConfig::default()).unwrap();
            s.persist_flow(stored("old", "d", "1.1.1.1", 0, 7, "A"), now).unwrap();
            s.persist_flow(stored("new", "d", "1.1.1.1", now - 1, 3, "B"), now)
                .unwrap();
            s.retention_sweep(DEFAULT_RETENTION_MS, now).unwrap();
            s.persist_flow(stored("later", "d", "1.1.1.1", now, 2, "B"), now)
                .unwrap();
            s.flush().unwrap();
        }
        let s = Store::open(dir.path(), StoreConfig::default()).unwrap();
        assert_eq!(s.flow_count(), 2);
        let totals = s
            .exposure()
            .company_totals(&SeriesFilter::default(), &TimeWindow::all());
        let bytes: Vec<(String, u64)> = totals.iter().map(|t| (t.0.clone(), t.2)).collect();
        assert_eq!(bytes, [("A".to_owned(), 7), ("B".to_owned(), 5)]);
        let text = std::fs::read_to_string(dir.path().join(JOURNAL_FILE)).unwrap();
        assert!(!text.contains("\"id\":\"old\""));
    }
}
