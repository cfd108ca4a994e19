//! Deployment stages and the features they unlock.
//!
//! A household moves through three stages: a passive display, then curriculum
//! delivery, then active firewall controls. Features only ever accumulate as
//! the stage increases, and transitions only move forward unless an explicit
//! administrative override is given.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    Display = 1,
    Curriculum = 2,
    Controls = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Display, Stage::Curriculum, Stage::Controls];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn features(self) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|f| f.required_stage() <= self)
            .collect()
    }
}

impl TryFrom<u8> for Stage {
    type Error = StageError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Stage::Display),
            2 => Ok(Stage::Curriculum),
            3 => Ok(Stage::Controls),
            other => Err(StageError::InvalidStage(other)),
        }
    }
}

impl From<Stage> for u8 {
    fn from(value: Stage) -> Self {
        value.number()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Display,
    Curriculum,
    Controls,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Display, Feature::Curriculum, Feature::Controls];

    pub fn required_stage(self) -> Stage {
        match self {
            Feature::Display => Stage::Display,
            Feature::Curriculum => Stage::Curriculum,
            Feature::Controls => Stage::Controls,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Feature::Display => "display",
            Feature::Curriculum => "curriculum",
            Feature::Controls => "controls",
        };
        f.write_str(name)
    }
}

/// Returned whenever an operation needs a feature the current stage lacks.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{feature} is locked until stage {required_stage} (current stage {current_stage})")]
pub struct StageGateError {
    pub feature: Feature,
    pub required_stage: Stage,
    pub current_stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageError {
    #[error("stage must be 1, 2 or 3, got {0}")]
    InvalidStage(u8),
    #[error("refusing to move from stage {current} back to stage {requested} without override")]
    Regression { current: Stage, requested: Stage },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "StageConfigRepr", into = "StageConfigRepr")]
pub struct StageConfig {
    stage: Stage,
    started_ms: BTreeMap<Stage, i64>,
}

#[derive(Serialize, Deserialize)]
struct StageConfigRepr {
    stage: Stage,
    stage_started_ms: BTreeMap<Stage, i64>,
    #[serde(default)]
    features: Vec<Feature>,
}

impl From<StageConfigRepr> for StageConfig {
    fn from(repr: StageConfigRepr) -> Self {
        StageConfig {
            stage: repr.stage,
            started_ms: repr.stage_started_ms,
        }
    }
}

impl From<StageConfig> for StageConfigRepr {
    fn from(cfg: StageConfig) -> Self {
        StageConfigRepr {
            features: cfg.stage.features(),
            stage: cfg.stage,
            stage_started_ms: cfg.started_ms,
        }
    }
}

impl StageConfig {
    pub fn new(now_ms: i64) -> Self {
        Self::at(Stage::Display, now_ms)
    }

    /// A config that entered `stage` at `now_ms`, skipping any earlier stages.
    pub fn at(stage: Stage, now_ms: i64) -> Self {
        let mut started_ms = BTreeMap::new();
        started_ms.insert(stage, now_ms);
        Self { stage, started_ms }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn started_ms(&self, stage: Stage) -> Option<i64> {
        self.started_ms.get(&stage).copied()
    }

    pub fn features(&self) -> Vec<Feature> {
        self.stage.features()
    }

    pub fn permits(&self, feature: Feature) -> bool {
        feature.required_stage() <= self.stage
    }

    pub fn require(&self, feature: Feature) -> Result<(), StageGateError> {
        if self.permits(feature) {
            Ok(())
        } else {
            Err(StageGateError {
                feature,
                required_stage: feature.required_stage(),
                current_stage: self.stage,
            })
        }
    }

    /// When curriculum offsets start counting: the start of stage 2, or of
    /// stage 3 if the household skipped straight there.
    pub fn curriculum_anchor_ms(&self) -> Option<i64> {
        if self.stage < Stage::Curriculum {
            return None;
        }
        self.started_ms(Stage::Curriculum)
            .or_else(|| self.started_ms(Stage::Controls))
    }

    /// Moves to `target`. Forward moves (including skips) always succeed;
    /// moving backwards needs `allow_regression`, and forgets the start times
    /// of the stages being left.
    pub fn transition(&mut self, target: Stage, now_ms: i64, allow_regression: bool) -> Result<(), StageError> {
        if target < self.stage {
            if !allow_regression {
                return Err(StageError::Regression {
                    current: self.stage,
                    requested: target,
                });
            }
            self.started_ms.retain(|s, _| *s <= target);
        }
        if target != self.stage {
            self.started_ms.entry(target).or_insert(now_ms);
            self.stage = target;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_strictly_increase_with_stage() {
        let mut prev = 0;
        for stage in Stage::ALL {
            let n = stage.features().len();
            assert!(n > prev);
            prev = n;
        }
        assert_eq!(Stage::Display.features(), vec![Feature::Display]);
        assert_eq!(
            Stage::Controls.features(),
            vec![Feature::Display, Feature::Curriculum, Feature::Controls]
        );
    }

    #[test]
    fn forward_transitions_unlock_features() {
        let mut cfg = StageConfig::new(0);
        assert!(!cfg.permits(Feature::Curriculum));
        cfg.transition(Stage::Curriculum, 10, false).unwrap();
        assert!(cfg.permits(Feature::Curriculum));
        assert!(!cfg.permits(Feature::Controls));
    }

    #[test]
    fn skipping_forward_is_allowed() {
        let mut cfg = StageConfig::new(0);
        cfg.transition(Stage::Controls, 5, false).unwrap();
        assert!(cfg.permits(Feature::Curriculum) && cfg.permits(Feature::Controls));
        assert_eq!(cfg.curriculum_anchor_ms(), Some(5));
    }

    #[test]
    fn regression_needs_override() {
        let mut cfg = StageConfig::new(0);
        cfg.transition(Stage::Curriculum, 10, false).unwrap();
        let err = cfg.transition(Stage::Display, 20, false).unwrap_err();
        assert_eq!(
            err,
            StageError::Regression {
                current: Stage::Curriculum,
                requested: Stage::Display
            }
        );
        assert_eq!(cfg.stage(), Stage::Curriculum);
        cfg.transition(Stage::Display, 20, true).unwrap();
        assert_eq!(cfg.stage(), Stage::Display);
        assert_eq!(cfg.started_ms(Stage::Curriculum), None);
    }

    #[test]
    fn gate_error_names_required_stage() {
        let cfg = StageConfig::new(0);
        let err = cfg.require(Feature::Controls).unwrap_err();
        assert_eq!(err.required_stage, Stage::Controls);
        assert_eq!(err.current_stage, Stage::Display);
    }

    #[test]
    fn serialises_with_derived_features() {
        let mut cfg = StageConfig::new(1);
        cfg.transition(Stage::Curriculum, 2, false).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(
            json,
            r#"{"stage":2,"stage_started_ms":{"1":1,"2":2},"features":["display","curriculum"]}"#
        );
        let back: StageConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<StageConfig>(r#"{"stage":4,"stage_started_ms":{}}"#).is_err());
    }
}
