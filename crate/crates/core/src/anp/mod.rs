//! Attentive neural process surrogate.
//!
//! A deterministic path (cross-attention over context encodings), a latent
//! path (mean-aggregated encodings to a diagonal Gaussian over `z`) and a
//! Gaussian decoder. Gradients are computed by hand; see [`AnpParams::elbo`].

mod gaussian;
mod model;
mod params;
mod train;

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Points};
use crate::io;

pub use gaussian::{kl_diag_gaussian, log_normal, GaussianDiag};
pub use model::Elbo;
pub use params::{AnpParams, Architecture, ModelSpec, TensorInfo};
pub use train::{train, MetricRow, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Error)]
pub enum AnpError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("target set is empty")]
    EmptyTarget,
    #[error("query set is empty")]
    EmptyQuery,
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained parameters plus the affine map between task outputs and the
/// standardized scale the network works in.
#[derive(Clone, Debug, PartialEq)]
pub struct AnpModel {
    pub params: AnpParams,
    pub y_shift: f64,
    pub y_scale: f64,
}

const CHECKPOINT_FORMAT: &str = "tlopt-anp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: Architecture,
    y_shift: f64,
    y_scale: f64,
    tensors: Vec<TensorDump>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDump {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

impl AnpModel {
    /// A model working directly on raw outputs.
    pub fn unscaled(params: AnpParams) -> Self {
        Self { params, y_shift: 0.0, y_scale: 1.0 }
    }

    pub fn standardize(&self, points: &Points) -> Points {
        Points::new(points.x.clone(), points.y.mapv(|y| (y - self.y_shift) / self.y_scale))
    }

    /// Predictive mean and std on the raw output scale.
    pub fn predict(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<GaussianDiag, AnpError> {
        let out = self.params.predict(&self.standardize(context), query_x)?;
        Ok(GaussianDiag {
            mean: out.mean.iter().map(|m| m * self.y_scale + self.y_shift).collect(),
            std: out.std.iter().map(|s| s * self.y_scale).collect(),
        })
    }

    pub fn to_checkpoint_json(&self) -> Result<String, AnpError> {
        let tensors = self
            .params
            .tensors()
            .iter()
            .map(|t| TensorDump {
                name: t.name.clone(),
                shape: [t.rows, t.cols],
                values: self.params.values()[t.offset..t.offset + t.len()].to_vec(),
            })
            .collect();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: *self.params.architecture(),
            y_shift: self.y_shift,
            y_scale: self.y_scale,
            tensors,
        };
        Ok(io::to_canonical_json(&ckpt)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, AnpError> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(AnpError::Checkpoint(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        let a = ckpt.architecture;
        let arch = Architecture::new(
            a.x_dim,
            &ModelSpec { width: a.width, encoder_layers: a.encoder_layers, decoder_layers: a.decoder_layers },
        )?;
        let mut params = AnpParams::zeros(arch);
        if ckpt.tensors.len() != params.tensors().len() {
            return Err(AnpError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.tensors().len(),
                ckpt.tensors.len()
            )));
        }
        let mut values = Vec::with_capacity(params.len());
        for (dump, info) in ckpt.tensors.iter().zip(params.tensors()) {
            if dump.name != info.name || dump.shape != [info.rows, info.cols] || dump.values.len() != info.len() {
                return Err(AnpError::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} [{}, {}]",
                    dump.name, dump.shape, info.name, info.rows, info.cols
                )));
            }
            values.extend_from_slice(&dump.values);
        }
        params.set_values(values)?;
        if !(ckpt.y_scale > 0.0) || !ckpt.y_shift.is_finite() || !params.is_finite() {
            return Err(AnpError::Checkpoint("non-finite weights or scaling".into()));
        }
        Ok(Self { params, y_shift: ckpt.y_shift, y_scale: ckpt.y_scale })
    }

    pub fn save(&self, path: &Path) -> Result<(), AnpError> {
        io::write_atomic(path, self.to_checkpoint_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AnpError> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
