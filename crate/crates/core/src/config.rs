//! Run configuration shared by every CLI command.
//!
//! JSON with a `schema_version` field; every section is optional and falls
//! back to the desk-scale defaults below. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affordance::{DEFAULT_BANK_SIZE, DEFAULT_HOI_THRESHOLD, DEFAULT_KEEP_THRESHOLD};
use crate::error::{AtlError, Result};
use crate::eval::{SplitMode, DEFAULT_UNSEEN_FRACTION, RARE_THRESHOLD};
use crate::io;
use crate::pipeline::TrainConfig;
use crate::synth::WorldConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_external: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            n_test: 1000,
            n_external: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// Fraction of categories (composition modes) or objects (novel-object)
    /// held out when no explicit list is given.
    pub unseen_fraction: f64,
    pub unseen_objects: Option<Vec<usize>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            mode: SplitMode::NovelObject,
            unseen_fraction: DEFAULT_UNSEEN_FRACTION,
            unseen_objects: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    pub m: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_BANK_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffordanceConfig {
    pub hoi_threshold: f64,
    pub keep_threshold: f64,
    /// Fresh object-feature queries drawn per evaluated object.
    pub queries_per_object: usize,
}

impl Default for AffordanceConfig {
    fn default() -> Self {
        Self {
            hoi_threshold: DEFAULT_HOI_THRESHOLD,
            keep_threshold: DEFAULT_KEEP_THRESHOLD,
            queries_per_object: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub rare_threshold: u64,
    /// Human / object detection confidences used at inference.
    pub s_h: f64,
    pub s_o: f64,
    /// Pairs whose human / object confidence falls below these are dropped.
    pub human_threshold: f64,
    pub object_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rare_threshold: RARE_THRESHOLD,
            s_h: 1.0,
            s_o: 1.0,
            human_threshold: 0.0,
            object_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendsConfig {
    pub seeds: Vec<u64>,
    /// Bank sizes swept on the first seed.
    pub bank_sizes: Vec<usize>,
}

impl Default for TrendsConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            bank_sizes: vec![5, 10, 20, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Random single-classifier configurations.
    pub configs: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { configs: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub bank: BankConfig,
    pub affordance: AffordanceConfig,
    pub eval: EvalConfig,
    pub trends: TrendsConfig,
    pub gradcheck: GradCheckConfig,
}

/// Desk-scale training defaults.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        hidden: 64,
        lr: 0.5,
        iterations: 8000,
        hoi_batch: 16,
        object_batch: 2,
        ..TrainConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            train: desk_train_config(),
            bank: BankConfig::default(),
            affordance: AffordanceConfig::default(),
            eval: EvalConfig::default(),
            trends: TrendsConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = io::read_json(path).map_err(|e| AtlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(AtlError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.train
            .validate()
            .map_err(|e| AtlError::Config(format!("train: {e}")))?;
        let bad = |m: String| Err(AtlError::Config(m));
        if !(self.split.unseen_fraction > 0.0 && self.split.unseen_fraction < 1.0) {
            return bad(format!(
                "split.unseen_fraction: {} not in (0, 1)",
                self.split.unseen_fraction
            ));
        }
        if self.bank.m == 0 {
            return bad("bank.m: must be at least 1".into());
        }
        for (name, v) in [
            ("affordance.hoi_threshold", self.affordance.hoi_threshold),
            ("affordance.keep_threshold", self.affordance.keep_threshold),
            ("eval.s_h", self.eval.s_h),
            ("eval.s_o", self.eval.s_o),
            ("eval.human_threshold", self.eval.human_threshold),
            ("eval.object_threshold", self.eval.object_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name}: {v} not in [0, 1]"));
            }
        }
        if self.trends.seeds.is_empty() {
            return bad("trends.seeds: must not be empty".into());
        }
        if self.trends.bank_sizes.contains(&0) {
            return bad("trends.bank_sizes: sizes must be at least 1".into());
        }
        if self.world.n_pairs > self.world.n_verbs * self.world.n_objects {
            return bad("world.n_pairs: exceeds n_verbs * n_objects".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"schema_version":1,"seed":9,"bank":{"m":20}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.bank.m, 20);
        assert_eq!(cfg.train, desk_train_config());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed":1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train":{"lambda3":1}}"#).is_err());
    }

    #[test]
    fn validation_names_field() {
        let mut cfg = RunConfig::default();
        cfg.affordance.keep_threshold = 2.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("affordance.keep_threshold"), "{err}");
        let cfg = RunConfig {
            schema_version: 7,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
