use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::BoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Ucb,
    Ei,
    Pi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    /// Exploration weight, used by UCB only.
    pub beta: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { kind: AcquisitionKind::Ucb, beta: 2.0 }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(BoError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    /// Acquisition value; `best` is the incumbent value for EI and PI.
    pub fn score(&self, mean: f64, std: f64, best: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Ucb => ucb(mean, std, self.beta),
            AcquisitionKind::Ei => ei(mean, std, best),
            AcquisitionKind::Pi => pi(mean, std, best),
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn ucb(mean: f64, std: f64, beta: f64) -> f64 {
    mean + beta * std
}

/// Expected improvement over `best`; reduces to `max(mean - best, 0)` at zero std.
pub fn ei(mean: f64, std: f64, best: f64) -> f64 {
    if std > 0.0 {
        let n = standard_normal();
        let z = (mean - best) / std;
        (mean - best) * n.cdf(z) + std * n.pdf(z)
    } else {
        (mean - best).max(0.0)
    }
}

/// Probability of improvement over `best`; an indicator at zero std.
pub fn pi(mean: f64, std: f64, best: f64) -> f64 {
    if std > 0.0 {
        standard_normal().cdf((mean - best) / std)
    } else if mean > best {
        1.0
    } else {
        0.0
    }
}
