use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnpError;
use crate::seed;

/// Hyperparameters of the network, independent of the input dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Hidden width `h`, also the representation and latent dimension.
    pub width: usize,
    /// Linear layers in each encoder MLP.
    pub encoder_layers: usize,
    /// Linear layers in the decoder MLP.
    pub decoder_layers: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { width: 32, encoder_layers: 2, decoder_layers: 2 }
    }
}

/// Full network shape: a [`ModelSpec`] bound to an input dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub x_dim: usize,
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

/// Fan-in and fan-out of one linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LinearShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Indices of the linear layers in parameter order.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIds {
    pub det: usize,
    pub query: usize,
    pub key: usize,
    pub value: usize,
    pub lat: usize,
    pub lat_head: usize,
    pub dec: usize,
}

impl Architecture {
    pub fn new(x_dim: usize, spec: &ModelSpec) -> Result<Self, AnpError> {
        if x_dim == 0 || spec.width == 0 {
            return Err(AnpError::Architecture("input dimension and width must be positive".into()));
        }
        if spec.encoder_layers < 2 || spec.decoder_layers < 2 {
            return Err(AnpError::Architecture(
                "encoder and decoder need at least two linear layers (one hidden layer)".into(),
            ));
        }
        Ok(Self { x_dim, width: spec.width, encoder_layers: spec.encoder_layers, decoder_layers: spec.decoder_layers })
    }

    pub fn latent_dim(&self) -> usize {
        self.width
    }

    pub(crate) fn ids(&self) -> LayerIds {
        let e = self.encoder_layers;
        LayerIds { det: 0, query: e, key: e + 1, value: e + 2, lat: e + 3, lat_head: 2 * e + 3, dec: 2 * e + 4 }
    }

    pub(crate) fn linears(&self) -> Vec<(String, LinearShape)> {
        let (d, h) = (self.x_dim, self.width);
        let mut out = Vec::new();
        let mlp = |out: &mut Vec<(String, LinearShape)>, prefix: &str, depth: usize, fan_in: usize, fan_out: usize| {
            for l in 0..depth {
                let shape = LinearShape {
                    fan_in: if l == 0 { fan_in } else { h },
                    fan_out: if l + 1 == depth { fan_out } else { h },
                };
                out.push((format!("{prefix}.{l}"), shape));
            }
        };
        mlp(&mut out, "det", self.encoder_layers, d + 1, h);
        out.push(("attn.query".into(), LinearShape { fan_in: d, fan_out: h }));
        out.push(("attn.key".into(), LinearShape { fan_in: d, fan_out: h }));
        out.push(("attn.value".into(), LinearShape { fan_in: h, fan_out: h }));
        mlp(&mut out, "lat", self.encoder_layers, d + 1, h);
        out.push(("lat.head".into(), LinearShape { fan_in: h, fan_out: 2 * self.latent_dim() }));
        mlp(&mut out, "dec", self.decoder_layers, d + h + self.latent_dim(), 2);
        out
    }
}

/// Name, shape and offset of one weight tensor in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All network weights in one flat vector.
///
/// Linear layer `l` owns tensors `2l` (weight, `fan_in × fan_out`, applied as
/// `x · W`) and `2l + 1` (bias, `1 × fan_out`), stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct AnpParams {
    arch: Architecture,
    tensors: Vec<TensorInfo>,
    values: Vec<f64>,
}

impl AnpParams {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Self {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, shape) in arch.linears() {
            for (suffix, rows) in [("w", shape.fan_in), ("b", 1)] {
                tensors.push(TensorInfo { name: format!("{name}.{suffix}"), rows, cols: shape.fan_out, offset });
                offset += rows * shape.fan_out;
            }
        }
        Self { arch, tensors, values: vec![0.0; offset] }
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = seed::derived_rng(seed, &[seed::TAG_INIT]);
        for t in params.tensors.iter().filter(|t| t.name.ends_with(".w")) {
            let limit = (6.0 / (t.rows + t.cols) as f64).sqrt();
            for v in &mut params.values[t.offset..t.offset + t.len()] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        params
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor_info(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Mutable 2-D view of a named tensor.
    pub fn tensor_mut(&mut self, name: &str) -> Option<ArrayViewMut2<'_, f64>> {
        let t = self.tensor_info(name)?.clone();
        Some(
            ArrayViewMut2::from_shape((t.rows, t.cols), &mut self.values[t.offset..t.offset + t.len()])
                .expect("layout matches"),
        )
    }

    pub fn tensor(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let t = self.tensor_info(name)?;
        Some(ArrayView2::from_shape((t.rows, t.cols), &self.values[t.offset..t.offset + t.len()]).expect("layout matches"))
    }

    pub(crate) fn linear(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = &self.tensors[2 * layer];
        let b = &self.tensors[2 * layer + 1];
        (
            ArrayView2::from_shape((w.rows, w.cols), &self.values[w.offset..w.offset + w.len()]).expect("layout"),
            ArrayView1::from(&self.values[b.offset..b.offset + b.len()]),
        )
    }

    /// Mutable views of one linear layer's slots in a gradient buffer laid out
    /// like these parameters.
    pub(crate) fn linear_grad<'g>(
        &self,
        grads: &'g mut [f64],
        layer: usize,
    ) -> (ArrayViewMut2<'g, f64>, ArrayViewMut1<'g, f64>) {
        let w = &self.tensors[2 * layer];
        let b = &self.tensors[2 * layer + 1];
        let (wslice, rest) = grads[w.offset..b.offset + b.len()].split_at_mut(w.len());
        (ArrayViewMut2::from_shape((w.rows, w.cols), wslice).expect("layout"), ArrayViewMut1::from(rest))
    }

    /// Replaces every value, checking the length against the layout.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), AnpError> {
        if values.len() != self.values.len() {
            return Err(AnpError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values = values;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
