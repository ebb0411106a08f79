use std::path::Path;

use serde::{Deserialize, Serialize};
use tlopt_core::anp::{ModelSpec, TrainConfig};
use tlopt_core::bo::{AcquisitionConfig, AcquisitionKind, BoConfig};
use tlopt_core::design::{DesignKind, DesignSpace};
use tlopt_core::io;
use tlopt_core::sim::{SimConfig, TrafficNetwork};

use crate::CliError;

/// Options per intersection: phases of the default combination for
/// allocation designs, candidate combinations for combination designs.
pub const OPTIONS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { rows: 2, cols: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    #[serde(rename = "N")]
    pub n_tasks: usize,
    #[serde(rename = "M")]
    pub n_samples: usize,
    pub base_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_tasks: 24, n_samples: 64, base_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.learning_rate,
            steps: t.steps,
            batch_size: t.batch_size,
            checkpoint_interval: t.checkpoint_interval,
            seed: t.seed,
            width: t.model.width,
            encoder_layers: t.model.encoder_layers,
            decoder_layers: t.model.decoder_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoSection {
    #[serde(rename = "K")]
    pub budget: usize,
    pub pool_size: usize,
    pub local_fraction: f64,
    pub acquisition: AcquisitionKind,
    pub beta: f64,
    pub seed: u64,
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoConfig::default();
        let a = AcquisitionConfig::default();
        Self {
            budget: b.budget,
            pool_size: b.pool_size,
            local_fraction: b.local_fraction,
            acquisition: a.kind,
            beta: a.beta,
            seed: b.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestConfig {
    pub n_unseen_patterns: usize,
    pub n_repeats: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self { n_unseen_patterns: 5, n_repeats: 3 }
    }
}

/// Everything a pipeline run depends on. Missing keys take defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub kind: DesignKind,
    pub sim: SimConfig,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub bo: BoSection,
    pub test: TestConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical JSON of the effective config.
    pub fn to_json(&self) -> String {
        io::to_canonical_json(self).expect("config values are finite")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.network().map_err(|e| bad(&e))?;
        self.space().map_err(|e| bad(&e))?;
        self.sim.validate(OPTIONS).map_err(|e| bad(&e))?;
        if self.dataset.n_tasks < 2 || self.dataset.n_samples < 4 {
            return Err(CliError::Config("dataset needs N >= 2 tasks and M >= 4 samples".into()));
        }
        self.train_config().validate().map_err(|e| bad(&e))?;
        self.bo_config(0).validate().map_err(|e| bad(&e))?;
        self.acquisition().validate().map_err(|e| bad(&e))?;
        if self.test.n_unseen_patterns == 0 || self.test.n_repeats == 0 {
            return Err(CliError::Config("test needs at least one unseen pattern and one repeat".into()));
        }
        if self.test.n_unseen_patterns > 100 || self.test.n_repeats > 100 {
            return Err(CliError::Config("at most 100 unseen patterns and 100 repeats".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<TrafficNetwork, tlopt_core::sim::SimError> {
        TrafficNetwork::grid(self.network.rows, self.network.cols)
    }

    pub fn space(&self) -> Result<DesignSpace, tlopt_core::design::DesignError> {
        DesignSpace::new(self.kind, self.network.rows * self.network.cols, OPTIONS)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.lr,
            steps: t.steps,
            batch_size: t.batch_size,
            checkpoint_interval: t.checkpoint_interval,
            seed: t.seed,
            z_samples: 1,
            model: ModelSpec { width: t.width, encoder_layers: t.encoder_layers, decoder_layers: t.decoder_layers },
        }
    }

    pub fn bo_config(&self, seed: u64) -> BoConfig {
        BoConfig { budget: self.bo.budget, pool_size: self.bo.pool_size, local_fraction: self.bo.local_fraction, seed }
    }

    pub fn acquisition(&self) -> AcquisitionConfig {
        AcquisitionConfig { kind: self.bo.acquisition, beta: self.bo.beta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn partial_config_and_rejections() {
        let cfg = ExperimentConfig::from_json(r#"{"bo": {"K": 7, "acquisition": "ei"}, "dataset": {"N": 6}}"#).unwrap();
        assert_eq!(cfg.bo.budget, 7);
        assert_eq!(cfg.bo.acquisition, AcquisitionKind::Ei);
        assert_eq!(cfg.dataset.n_tasks, 6);
        assert_eq!(cfg.dataset.n_samples, 64);
        assert!(ExperimentConfig::from_json(r#"{"bo": {"k": 7}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"typo": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bo": {"beta": -1.0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"network": {"rows": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"lr": 0}}"#).is_err());
    }
}
