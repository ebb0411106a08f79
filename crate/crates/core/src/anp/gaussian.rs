use serde::{Deserialize, Serialize};

use super::AnpError;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self, AnpError> {
        if mean.len() != std.len() {
            return Err(AnpError::Shape(format!("{} means, {} stds", mean.len(), std.len())));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
            return Err(AnpError::NonPositiveStd(*s));
        }
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Sum of per-component log densities at `y`.
    pub fn log_prob(&self, y: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(y)
            .map(|((&m, &s), &v)| log_normal(v, m, s))
            .sum()
    }
}

/// log N(y | mean, std²).
pub fn log_normal(y: f64, mean: f64, std: f64) -> f64 {
    let z = (y - mean) / std;
    -LN_SQRT_2PI - std.ln() - 0.5 * z * z
}

/// KL(q ‖ p) between diagonal Gaussians, summed over components.
pub fn kl_diag_gaussian(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64, AnpError> {
    if q.len() != p.len() {
        return Err(AnpError::Shape(format!("KL between {} and {} dimensions", q.len(), p.len())));
    }
    if let Some(s) = q.std.iter().chain(&p.std).find(|s| !(**s > 0.0)) {
        return Err(AnpError::NonPositiveStd(*s));
    }
    Ok((0..q.len())
        .map(|i| {
            let (qm, qs, pm, ps) = (q.mean[i], q.std[i], p.mean[i], p.std[i]);
            (ps / qs).ln() + (qs * qs + (qm - pm) * (qm - pm)) / (2.0 * ps * ps) - 0.5
        })
        .sum())
}
