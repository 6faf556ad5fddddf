use std::path::Path;

use hrpca::hierarchy::HierarchySpec;
use hrpca::model::FitConfig;
use hrpca::synth::GenConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// The single experiment document shared by every subcommand.
///
/// ```toml
/// [generator]
/// n_base_rows = 625
/// seed = 42
///
/// [hierarchy]
/// levels = ["interaction", "session", "profile", "account"]
/// fan_out = [5, 5, 5]
/// agg_op = "mean"
///
/// [fit]
/// rank = { fixed = 1 }
/// threshold = { dynamic = 3.0 }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GenConfig,
    pub hierarchy: HierarchySpec,
    pub fit: FitConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.hierarchy.validate()?;
        self.fit.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hrpca::model::{RankMode, ThresholdMode};

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg: ExperimentConfig =
            toml::from_str("[generator]\nseed = 7\n[fit]\nrank = { fixed = 2 }\n").unwrap();
        assert_eq!(cfg.generator.seed, 7);
        assert_eq!(cfg.generator.n_base_rows, 625);
        assert_eq!(cfg.fit.rank, RankMode::Fixed(2));
        assert_eq!(cfg.fit.threshold, ThresholdMode::Dynamic(3.0));
        assert_eq!(cfg.hierarchy, HierarchySpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[generator]\nsede = 7\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[other]\n").is_err());
    }

    #[test]
    fn doc_example_parses() {
        let text = "[generator]\nn_base_rows = 625\nseed = 42\n[hierarchy]\nlevels = [\"interaction\", \"session\", \"profile\", \"account\"]\nfan_out = [5, 5, 5]\nagg_op = \"mean\"\n[fit]\nrank = { fixed = 1 }\nthreshold = { dynamic = 3.0 }\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.fit, FitConfig::fixed_rank(1));
    }
}
