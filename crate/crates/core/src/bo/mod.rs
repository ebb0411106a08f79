//! Online optimization: acquisition functions, candidate-pool maximization
//! and the evaluate/update loop, plus random-search and GP baselines.

mod acquisition;
mod gp;

use std::error::Error as StdError;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anp::{AnpError, AnpModel, GaussianDiag};
use crate::dataset::Points;
use crate::design::{Design, DesignSpace};
use crate::{io, par, seed};

pub use acquisition::{ei, pi, ucb, AcquisitionConfig, AcquisitionKind};
pub use gp::{gp_posterior, median_lengthscale, rbf, GP_NOISE};

type BoxError = Box<dyn StdError + Send + Sync>;

/// Std of the Gaussian perturbations around the incumbent.
pub const LOCAL_STD: f64 = 0.05;
/// Candidates scored per surrogate call.
const CHUNK: usize = 128;

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("surrogate failed: {0}")]
    Surrogate(#[source] BoxError),
    #[error("objective failed at trial {trial}: {source}")]
    Objective { trial: usize, source: BoxError },
    #[error("gaussian process: {0}")]
    Gp(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    /// Online trial budget.
    #[serde(rename = "K")]
    pub budget: usize,
    pub pool_size: usize,
    /// Share of the pool drawn around the incumbent once data exists.
    pub local_fraction: f64,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { budget: 40, pool_size: 1024, local_fraction: 0.5, seed: 0 }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if self.budget == 0 || self.pool_size == 0 {
            return Err(BoError::Config("budget and pool size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(BoError::Config(format!("local fraction {} outside [0, 1]", self.local_fraction)));
        }
        Ok(())
    }
}

/// Anything that maps an online dataset and query designs to a predictive
/// Gaussian per query.
pub trait Surrogate: Sync {
    fn predict(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<GaussianDiag, BoError>;
}

impl Surrogate for AnpModel {
    fn predict(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<GaussianDiag, BoError> {
        AnpModel::predict(self, context, query_x).map_err(|e: AnpError| BoError::Surrogate(Box::new(e)))
    }
}

/// Exact GP regression with fixed heuristic hyperparameters; a standard
/// normal prior when there is no data.
#[derive(Clone, Copy, Debug, Default)]
pub struct GpSurrogate;

impl Surrogate for GpSurrogate {
    fn predict(&self, context: &Points, query_x: ArrayView2<f64>) -> Result<GaussianDiag, BoError> {
        if context.is_empty() {
            return Ok(GaussianDiag { mean: vec![0.0; query_x.nrows()], std: vec![1.0; query_x.nrows()] });
        }
        let (mean, std) = gp_posterior(context.x.view(), context.y.view(), query_x)?;
        Ok(GaussianDiag { mean: mean.to_vec(), std: std.to_vec() })
    }
}

/// The evaluated designs of one run in order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoTrace {
    pub designs: Vec<Design>,
    pub ys: Vec<f64>,
    pub best_so_far: Vec<f64>,
}

impl BoTrace {
    pub fn new() -> Self {
        Self { designs: Vec::new(), ys: Vec::new(), best_so_far: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn push(&mut self, x: Design, y: f64) {
        let best = self.best_so_far.last().map_or(y, |&b| b.max(y));
        self.designs.push(x);
        self.ys.push(y);
        self.best_so_far.push(best);
    }

    /// Index of the first evaluation attaining the maximum.
    pub fn incumbent_index(&self) -> Option<usize> {
        (!self.ys.is_empty()).then(|| crate::design::argmax(&self.ys))
    }

    pub fn incumbent(&self) -> Option<&Design> {
        self.incumbent_index().map(|i| &self.designs[i])
    }

    /// Online dataset as stacked points.
    pub fn points(&self, dim: usize) -> Points {
        let mut x = Array2::zeros((self.len(), dim));
        for (mut row, d) in x.rows_mut().into_iter().zip(&self.designs) {
            row.assign(&ndarray::ArrayView1::from(&d.values[..]));
        }
        Points::new(x, self.ys.iter().copied().collect())
    }

    /// `step,y,best_so_far` rows, steps counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,y,best_so_far\n");
        for (k, (y, b)) in self.ys.iter().zip(&self.best_so_far).enumerate() {
            out.push_str(&format!("{},{},{}\n", k + 1, y, b));
        }
        out
    }

    pub fn incumbent_json(&self) -> Result<Option<String>, serde_json::Error> {
        self.incumbent().map(io::to_canonical_json).transpose()
    }
}

impl Default for BoTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// A failed run with the trials completed before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct BoFailure {
    #[source]
    pub error: BoError,
    pub trace: BoTrace,
}

/// Uniform candidates first, then perturbations of the best observed design.
fn candidate_pool<R: Rng + ?Sized>(space: &DesignSpace, online: &Points, bo: &BoConfig, rng: &mut R) -> Array2<f64> {
    let dim = space.dim();
    let n_local = if online.is_empty() { 0 } else { (bo.pool_size as f64 * bo.local_fraction).round() as usize };
    let n_uniform = bo.pool_size - n_local;
    let mut pool = Array2::zeros((bo.pool_size, dim));
    for mut row in pool.rows_mut().into_iter().take(n_uniform) {
        row.assign(&ndarray::Array1::from(space.sample(rng).values));
    }
    if n_local > 0 {
        let ys = online.y.as_slice().expect("contiguous");
        let incumbent = online.x.row(crate::design::argmax(ys)).to_owned();
        let noise = Normal::new(0.0, LOCAL_STD).expect("valid std");
        for mut row in pool.rows_mut().into_iter().skip(n_uniform) {
            for (v, c) in row.iter_mut().zip(incumbent.iter()) {
                *v = (c + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    pool
}

/// Predictions for every pool row, scored in fixed-size chunks.
fn predict_pool<S: Surrogate + ?Sized>(surrogate: &S, online: &Points, pool: &Array2<f64>) -> Result<GaussianDiag, BoError> {
    let n_chunks = pool.nrows().div_ceil(CHUNK);
    let parts = par::map_range(n_chunks, |c| {
        let rows = c * CHUNK..((c + 1) * CHUNK).min(pool.nrows());
        surrogate.predict(online, pool.slice(ndarray::s![rows, ..]))
    });
    let (mut mean, mut std) = (Vec::with_capacity(pool.nrows()), Vec::with_capacity(pool.nrows()));
    for part in parts {
        let part = part?;
        mean.extend(part.mean);
        std.extend(part.std);
    }
    if mean.len() != pool.nrows() || std.len() != pool.nrows() {
        return Err(BoError::Surrogate(format!("expected {} predictions, got {}", pool.nrows(), mean.len()).into()));
    }
    Ok(GaussianDiag { mean, std })
}

/// Picks the next design: the acquisition argmax over a random candidate pool.
///
/// EI and PI compare against the best observed value, or against the best
/// predicted mean when nothing has been observed yet.
pub fn propose<S: Surrogate + ?Sized, R: Rng + ?Sized>(
    surrogate: &S,
    online: &Points,
    acq: &AcquisitionConfig,
    bo: &BoConfig,
    space: &DesignSpace,
    rng: &mut R,
) -> Result<Design, BoError> {
    bo.validate()?;
    acq.validate()?;
    let pool = candidate_pool(space, online, bo, rng);
    let pred = predict_pool(surrogate, online, &pool)?;
    let best = if online.is_empty() {
        pred.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        online.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    let scores: Vec<f64> = pred.mean.iter().zip(&pred.std).map(|(&m, &s)| acq.score(m, s, best)).collect();
    if scores.iter().any(|s| s.is_nan()) {
        return Err(BoError::NonFinite("acquisition score"));
    }
    let pick = crate::design::argmax(&scores);
    space.design(pool.row(pick).to_vec()).map_err(|e| BoError::Surrogate(Box::new(e)))
}

fn evaluate<F, E>(objective: &mut F, x: &Design, trial: usize) -> Result<f64, BoError>
where
    F: FnMut(&Design) -> Result<f64, E>,
    E: Into<BoxError>,
{
    let y = objective(x).map_err(|e| BoError::Objective { trial, source: e.into() })?;
    if !y.is_finite() {
        return Err(BoError::Objective { trial, source: format!("non-finite objective value {y}").into() });
    }
    Ok(y)
}

/// Runs `bo.budget` rounds of propose, evaluate, append, starting from an
/// empty online dataset.
pub fn run_bo<S, F, E>(
    surrogate: &S,
    mut objective: F,
    space: &DesignSpace,
    bo: &BoConfig,
    acq: &AcquisitionConfig,
) -> Result<BoTrace, BoFailure>
where
    S: Surrogate + ?Sized,
    F: FnMut(&Design) -> Result<f64, E>,
    E: Into<BoxError>,
{
    let mut trace = BoTrace::new();
    if let Err(error) = bo.validate().and_then(|_| acq.validate()) {
        return Err(BoFailure { error, trace });
    }
    let mut rng = seed::rng(bo.seed);
    let mut online = Points::empty(space.dim());
    for trial in 0..bo.budget {
        let step = propose(surrogate, &online, acq, bo, space, &mut rng)
            .and_then(|x| evaluate(&mut objective, &x, trial).map(|y| (x, y)));
        match step {
            Ok((x, y)) => {
                online.push(&x.values, y);
                trace.push(x, y);
            }
            Err(error) => return Err(BoFailure { error, trace }),
        }
    }
    Ok(trace)
}

/// Evaluates `budget` uniform designs drawn from the stream seeded by `seed`.
pub fn random_search<F, E>(mut objective: F, budget: usize, space: &DesignSpace, seed: u64) -> Result<BoTrace, BoFailure>
where
    F: FnMut(&Design) -> Result<f64, E>,
    E: Into<BoxError>,
{
    let mut trace = BoTrace::new();
    if budget == 0 {
        return Err(BoFailure { error: BoError::Config("budget must be at least 1".into()), trace });
    }
    let mut rng = seed::rng(seed);
    for trial in 0..budget {
        let x = space.sample(&mut rng);
        match evaluate(&mut objective, &x, trial) {
            Ok(y) => trace.push(x, y),
            Err(error) => return Err(BoFailure { error, trace }),
        }
    }
    Ok(trace)
}
