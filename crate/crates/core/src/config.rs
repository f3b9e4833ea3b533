//! Pipeline settings shared by every stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Representation, SplitRatios, DEFAULT_MASK_RATE, DEFAULT_TOKEN_CAP};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_NGRAM_ORDERS: [usize; 3] = [3, 5, 7];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("mask rate must lie in (0, 1), got {0}")]
    MaskRate(f64),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios(SplitRatios),
    #[error("token cap must be positive")]
    TokenCap,
    #[error("at least one n-gram order >= 2 is required")]
    Orders,
    #[error("worker count must be positive")]
    Workers,
}

/// Which dataset representations a run produces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationChoice {
    Raw,
    Abstracted,
    #[default]
    Both,
}

impl RepresentationChoice {
    pub fn representations(self) -> Vec<Representation> {
        match self {
            RepresentationChoice::Raw => vec![Representation::Raw],
            RepresentationChoice::Abstracted => vec![Representation::Abstracted],
            RepresentationChoice::Both => vec![Representation::Raw, Representation::Abstracted],
        }
    }
}

impl std::str::FromStr for RepresentationChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(RepresentationChoice::Raw),
            "abstracted" => Ok(RepresentationChoice::Abstracted),
            "both" => Ok(RepresentationChoice::Both),
            other => Err(format!(
                "unknown representation `{other}` (raw|abstracted|both)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_root: Option<PathBuf>,
    pub workdir: PathBuf,
    pub mask_rate: f64,
    pub token_cap: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
    pub ngram_orders: Vec<usize>,
    pub representation: RepresentationChoice,
    /// Worker threads; `None` means one per logical core.
    pub workers: Option<usize>,
    /// Accept a project split that misses the requested ratios.
    pub allow_imbalanced_split: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_root: None,
            workdir: PathBuf::from("wfc-work"),
            mask_rate: DEFAULT_MASK_RATE,
            token_cap: DEFAULT_TOKEN_CAP,
            ratios: SplitRatios::default(),
            seed: DEFAULT_SEED,
            ngram_orders: DEFAULT_NGRAM_ORDERS.to_vec(),
            representation: RepresentationChoice::Both,
            workers: None,
            allow_imbalanced_split: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(ConfigError::MaskRate(self.mask_rate));
        }
        if self.ratios.validate().is_err() {
            return Err(ConfigError::Ratios(self.ratios));
        }
        if self.token_cap == 0 {
            return Err(ConfigError::TokenCap);
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.iter().any(|&n| n < 2) {
            return Err(ConfigError::Orders);
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Workers);
        }
        Ok(())
    }

    pub fn representations(&self) -> Vec<Representation> {
        self.representation.representations()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        assert_eq!(c.mask_rate, 0.15);
        assert_eq!(c.token_cap, 1024);
        assert_eq!(c.ratios.as_array(), [0.8, 0.1, 0.1]);
        assert_eq!(c.ngram_orders, vec![3, 5, 7]);
        assert_eq!(c.validate(), Ok(()));
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |f: fn(&mut PipelineConfig)| {
            let mut c = PipelineConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert_eq!(bad(|c| c.mask_rate = 1.0), ConfigError::MaskRate(1.0));
        assert!(matches!(
            bad(|c| c.ratios.test = 0.2),
            ConfigError::Ratios(_)
        ));
        assert_eq!(bad(|c| c.ngram_orders = vec![1]), ConfigError::Orders);
        assert_eq!(bad(|c| c.workers = Some(0)), ConfigError::Workers);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"seed": 7, "representation": "raw"}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.representations(), vec![Representation::Raw]);
        assert_eq!(c.token_cap, 1024);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 7}"#).is_err());
    }
}
