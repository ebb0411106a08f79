use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnpError, AnpModel, AnpParams, Architecture, ModelSpec};
use crate::dataset::{sample_batch, sample_split, BatchSpec, ContextTargetSplit, MetaDataset, Sample, TaskRecord};
use crate::{par, seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Optimizer steps; one step consumes one batch of splits.
    pub steps: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    /// Reparameterized z samples per ELBO evaluation.
    pub z_samples: usize,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            steps: 10_000,
            batch_size: 16,
            checkpoint_interval: 200,
            seed: 0,
            z_samples: 1,
            model: ModelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnpError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AnpError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 || self.z_samples == 0 {
            return Err(AnpError::Config("batch size, checkpoint interval and z samples must be positive".into()));
        }
        Ok(())
    }
}

/// One validation row. `train_elbo` is the mean per-point ELBO over the
/// steps since the previous row, absent for the initial row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub train_elbo: Option<f64>,
    pub valid_ll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation log-likelihood.
    pub model: AnpModel,
    pub best_step: usize,
    pub history: Vec<MetricRow>,
}

/// A failed run, with the metrics recorded before the failure.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct TrainError {
    #[source]
    pub source: AnpError,
    pub history: Vec<MetricRow>,
}

impl From<AnpError> for TrainError {
    fn from(source: AnpError) -> Self {
        Self { source, history: Vec::new() }
    }
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean and std of every train-task output; std falls back to 1 when the
/// outputs are constant.
fn output_scaling(dataset: &MetaDataset) -> (f64, f64) {
    let ys: Vec<f64> = dataset.train_tasks().flat_map(|t| t.samples.iter().map(|s| s.y)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

fn standardized(dataset: &MetaDataset, shift: f64, scale: f64) -> MetaDataset {
    let tasks = dataset
        .tasks
        .iter()
        .map(|t| TaskRecord {
            task_id: t.task_id,
            pattern_seed: t.pattern_seed,
            samples: t.samples.iter().map(|s| Sample { x: s.x.clone(), y: (s.y - shift) / scale }).collect(),
        })
        .collect();
    MetaDataset { space: dataset.space, base_seed: dataset.base_seed, tasks, split: dataset.split.clone() }
}

/// Mean per-point target log-likelihood with z at the context posterior mean.
fn validation_ll(params: &AnpParams, splits: &[ContextTargetSplit]) -> Result<f64, AnpError> {
    let per_split = par::map_slice(splits, |s| -> Result<f64, AnpError> {
        let pred = params.predict(&s.context, s.target.x.view())?;
        Ok(pred.log_prob(s.target.y.as_slice().expect("contiguous")) / s.target.len() as f64)
    });
    let mut total = 0.0;
    for v in per_split {
        total += v?;
    }
    Ok(total / splits.len() as f64)
}

/// Meta-trains an ANP by batched ELBO ascent with Adam.
///
/// Every `checkpoint_interval` steps (and before the first step) the model is
/// scored on fixed context/target splits of the validation tasks; the best
/// scoring parameters are returned. Results depend only on the dataset and
/// config, not on the number of worker threads.
pub fn train(dataset: &MetaDataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if dataset.split.train.is_empty() || dataset.split.valid.is_empty() {
        return Err(AnpError::Config(format!(
            "need at least one train and one valid task, got {} and {}",
            dataset.split.train.len(),
            dataset.split.valid.len()
        ))
        .into());
    }
    let arch = Architecture::new(dataset.space.dim(), &config.model)?;
    let (shift, scale) = output_scaling(dataset);
    let data = standardized(dataset, shift, scale);
    let spec = BatchSpec { batch_size: config.batch_size, ..BatchSpec::default() };
    let bounds = spec.bounds_for(data.n_samples()).map_err(AnpError::from)?;
    let valid: Vec<ContextTargetSplit> = data
        .valid_tasks()
        .map(|t| sample_split(t, &bounds, &mut seed::derived_rng(config.seed, &[seed::TAG_VALID, t.task_id as u64])))
        .collect();

    let mut params = AnpParams::init(arch, config.seed);
    let mut history = Vec::new();
    let fail = |source: AnpError, history: &Vec<MetricRow>| TrainError { source, history: history.clone() };

    let initial = validation_ll(&params, &valid)?;
    history.push(MetricRow { step: 0, train_elbo: None, valid_ll: initial });
    let mut best = (initial, params.clone(), 0);

    let mut rng = seed::derived_rng(config.seed, &[seed::TAG_TRAIN]);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let (mut elbo_sum, mut elbo_count) = (0.0, 0usize);
    for step in 1..=config.steps {
        let batch = sample_batch(&data, &spec, &mut rng).map_err(|e| fail(e.into(), &history))?;
        let noise: Vec<Array2<f64>> = batch
            .iter()
            .map(|_| Array2::from_shape_simple_fn((config.z_samples, arch.latent_dim()), || rng.sample(StandardNormal)))
            .collect();
        let results = par::map_range(batch.len(), |i| params.elbo_with_noise(&batch[i], noise[i].view()));

        let mut grad = vec![0.0; params.len()];
        let mut elbo = 0.0;
        for (result, split) in results.into_iter().zip(&batch) {
            let e = result.map_err(|e| match e {
                AnpError::NonPositiveStd(_) | AnpError::NonFinite(_) => fail(AnpError::Divergence { step }, &history),
                other => fail(other, &history),
            })?;
            let w = 1.0 / (batch.len() * split.target.len()) as f64;
            elbo += w * e.value;
            for (g, d) in grad.iter_mut().zip(&e.grad) {
                *g += w * d;
            }
        }
        if !elbo.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(fail(AnpError::Divergence { step }, &history));
        }
        adam.step(params.values_mut(), &grad);
        if !params.is_finite() {
            return Err(fail(AnpError::Divergence { step }, &history));
        }
        elbo_sum += elbo;
        elbo_count += 1;

        if step % config.checkpoint_interval == 0 {
            let ll = validation_ll(&params, &valid).map_err(|e| fail(e, &history))?;
            if !ll.is_finite() {
                return Err(fail(AnpError::Divergence { step }, &history));
            }
            history.push(MetricRow { step, train_elbo: Some(elbo_sum / elbo_count as f64), valid_ll: ll });
            (elbo_sum, elbo_count) = (0.0, 0);
            if ll > best.0 {
                best = (ll, params.clone(), step);
            }
        }
    }
    Ok(TrainOutcome { model: AnpModel { params: best.1, y_shift: shift, y_scale: scale }, best_step: best.2, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::design::{DesignKind, DesignSpace};

    fn tiny_dataset(n_tasks: usize, n: usize) -> MetaDataset {
        let tasks = (0..n_tasks)
            .map(|t| TaskRecord {
                task_id: t,
                pattern_seed: t as u64,
                samples: (0..n)
                    .map(|i| {
                        let x = i as f64 / n as f64;
                        Sample { x: vec![x], y: (t as f64 + 1.0) * x }
                    })
                    .collect(),
            })
            .collect();
        MetaDataset {
            space: DesignSpace::new(DesignKind::Allocation, 1, 1).unwrap(),
            base_seed: 0,
            tasks,
            split: Split::five_to_one(n_tasks),
        }
    }

    fn config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            checkpoint_interval: 5,
            seed: 3,
            model: ModelSpec { width: 6, ..ModelSpec::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let ds = tiny_dataset(6, 20);
        let out = train(&ds, &config(0)).unwrap();
        let arch = Architecture::new(1, &config(0).model).unwrap();
        assert_eq!(out.model.params, AnpParams::init(arch, 3));
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_step, 0);
    }

    #[test]
    fn history_rows_and_determinism() {
        let ds = tiny_dataset(6, 20);
        let a = train(&ds, &config(23)).unwrap();
        let b = train(&ds, &config(23)).unwrap();
        assert_eq!(a.history.len(), 23 / 5 + 1);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert!(a.history.windows(2).all(|w| w[1].step == w[0].step + 5));
    }

    #[test]
    fn rejects_missing_validation_tasks_and_bad_configs() {
        let mut ds = tiny_dataset(2, 20);
        ds.split = Split { train: vec![0, 1], valid: vec![] };
        assert!(train(&ds, &config(1)).is_err());
        let ds = tiny_dataset(6, 20);
        assert!(train(&ds, &TrainConfig { learning_rate: 0.0, ..config(1) }).is_err());
        assert!(train(&ds, &TrainConfig { checkpoint_interval: 0, ..config(1) }).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let ds = tiny_dataset(6, 20);
        let err = train(&ds, &TrainConfig { learning_rate: 1e300, ..config(50) }).unwrap_err();
        assert!(matches!(err.source, AnpError::Divergence { .. }), "{err}");
        assert!(!err.history.is_empty());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2, 0.1);
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 1.9).abs() < 1e-8);
    }
}
