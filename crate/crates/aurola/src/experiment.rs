//! Experiment configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aurola_core::rerank::FusionConfig;
use aurola_core::synth::SynthConfig;
use aurola_core::trainer::TrainConfig;

use crate::{artifacts, PipelineError, Result};

/// One JSON file driving a full run; every subcommand flag can override a
/// field. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub mining_pool_size: usize,
    pub eval_ks: Vec<usize>,
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            features: None,
            out_dir: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            mining_pool_size: 32,
            eval_ks: vec![1, 5, 10],
            seed: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = artifacts::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for path in [&self.manifest, &self.features].into_iter().flatten() {
            if !path.exists() {
                return Err(PipelineError::Config(format!(
                    "referenced path does not exist: {}",
                    path.display()
                )));
            }
        }
        if self.mining_pool_size == 0 {
            return Err(PipelineError::Config("mining_pool_size must be >= 1".into()));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(PipelineError::Config("eval_ks must be nonempty, all >= 1".into()));
        }
        Ok(())
    }

    /// Applies the shared `--seed` override to every stage config.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed.or(self.seed) {
            self.seed = Some(seed);
            self.synth.seed = seed;
            self.train.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join("aurola-experiment-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.json");
        std::fs::write(&path, r#"{"not_a_field": 3}"#).unwrap();
        assert!(matches!(
            ExperimentConfig::load(&path),
            Err(PipelineError::Parse { .. })
        ));
    }

    #[test]
    fn seed_override_propagates() {
        let cfg = ExperimentConfig::default().with_seed(Some(9));
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn missing_paths_fail_validation() {
        let cfg = ExperimentConfig {
            manifest: Some(PathBuf::from("/definitely/not/here.jsonl")),
            ..ExperimentConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
