//! Offline meta dataset: collection, persistence and context/target sampling.
//!
//! On disk a dataset is JSON Lines. The first line is a manifest
//! `{"I","J","M","N","base_seed","kind","split_ratio"}`; every following line
//! is one evaluation `{"pattern_seed","task","x","y"}`, tasks in order.

use std::error::Error as StdError;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignKind, DesignSpace};
use crate::{io, par, seed};

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("task {task}, sample {sample}: {source}")]
    Objective { task: usize, sample: usize, source: BoxError },
    #[error("need at least {need} {what}, got {got}")]
    TooSmall { what: &'static str, need: usize, got: usize },
    #[error("no tasks")]
    NoTasks,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid batch spec: {0}")]
    Batch(String),
    #[error(transparent)]
    Design(#[from] crate::design::DesignError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A family of black-box objectives, one per task.
pub trait TaskSource: Sync {
    type Error: StdError + Send + Sync + 'static;

    fn n_tasks(&self) -> usize;

    /// Seed of the traffic pattern (or other generator) behind task `task`.
    fn pattern_seed(&self, task: usize) -> u64;

    /// Evaluates `x` on task `task`. `noise_seed` drives any observation noise.
    fn evaluate(&self, task: usize, x: &crate::design::Design, noise_seed: u64) -> Result<f64, Self::Error>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Evaluations of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub task_id: usize,
    pub pattern_seed: u64,
    pub samples: Vec<Sample>,
}

impl TaskRecord {
    pub fn points(&self) -> Points {
        Points::from_samples(self.samples.iter())
    }
}

/// Train/valid partition of task ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl Split {
    /// First `round(5N/6)` tasks train, the rest validate; both sides keep at
    /// least one task when `N ≥ 2`.
    pub fn five_to_one(n_tasks: usize) -> Self {
        let n_train = ((n_tasks as f64 * 5.0 / 6.0).round() as usize).clamp(1.min(n_tasks), n_tasks.saturating_sub(1).max(1));
        Self { train: (0..n_train).collect(), valid: (n_train..n_tasks).collect() }
    }
}

/// N tasks × M evaluations with a fixed train/valid split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaDataset {
    pub space: DesignSpace,
    pub base_seed: u64,
    pub tasks: Vec<TaskRecord>,
    pub split: Split,
}

/// Stacked inputs `x` (n × d) and outputs `y` (n).
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Points {
    pub fn empty(dim: usize) -> Self {
        Self { x: Array2::zeros((0, dim)), y: Array1::zeros(0) }
    }

    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Self {
        assert_eq!(x.nrows(), y.len(), "points need one output per input row");
        Self { x, y }
    }

    pub fn from_samples<'a>(samples: impl Iterator<Item = &'a Sample> + Clone) -> Self {
        let dim = samples.clone().next().map_or(0, |s| s.x.len());
        let rows: Vec<&Sample> = samples.collect();
        let x = Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i].x[j]);
        let y = rows.iter().map(|s| s.y).collect();
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Appends one observation.
    pub fn push(&mut self, x: &[f64], y: f64) {
        self.x.push_row(ndarray::ArrayView1::from(x)).expect("dimension matches");
        let mut ys = std::mem::take(&mut self.y).to_vec();
        ys.push(y);
        self.y = Array1::from(ys);
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self { x: self.x.select(ndarray::Axis(0), rows), y: self.y.select(ndarray::Axis(0), rows) }
    }
}

/// Context and target sets drawn from one task.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTargetSplit {
    pub task: usize,
    pub context: Points,
    pub target: Points,
}

/// Collects `n_samples` random designs per task.
///
/// Design and noise streams are keyed by `(base_seed, task, sample)`, so the
/// dataset does not depend on how the work is scheduled.
pub fn collect<T: TaskSource>(
    tasks: &T,
    space: DesignSpace,
    n_samples: usize,
    base_seed: u64,
) -> Result<MetaDataset, DatasetError> {
    let n_tasks = tasks.n_tasks();
    if n_tasks < 2 {
        return Err(DatasetError::TooSmall { what: "tasks", need: 2, got: n_tasks });
    }
    if n_samples < 2 {
        return Err(DatasetError::TooSmall { what: "samples per task", need: 2, got: n_samples });
    }
    let results = par::map_range(n_tasks * n_samples, |k| {
        let (task, sample) = (k / n_samples, k % n_samples);
        let tags = [task as u64, sample as u64];
        let design = space.sample(&mut seed::derived_rng(base_seed, &[seed::TAG_DESIGN, tags[0], tags[1]]));
        let noise_seed = seed::derive(base_seed, &[seed::TAG_NOISE, tags[0], tags[1]]);
        tasks
            .evaluate(task, &design, noise_seed)
            .map(|y| Sample { x: design.values, y })
            .map_err(|e| DatasetError::Objective { task, sample, source: Box::new(e) })
    });

    let mut records: Vec<TaskRecord> = (0..n_tasks)
        .map(|task| TaskRecord { task_id: task, pattern_seed: tasks.pattern_seed(task), samples: Vec::with_capacity(n_samples) })
        .collect();
    for (k, result) in results.into_iter().enumerate() {
        records[k / n_samples].samples.push(result?);
    }
    Ok(MetaDataset { space, base_seed, tasks: records, split: Split::five_to_one(n_tasks) })
}

/// Synthetic 1-D regression family `y = a·sin(2πx + φ)` with per-task
/// amplitude `a ∈ [0.5, 2]` and phase `φ ∈ [0, π]`, `x` uniform on `[0, 1]`.
/// Useful for checking meta-training without running the simulator.
pub fn sinusoid_family(n_tasks: usize, n_points: usize, seed: u64) -> MetaDataset {
    let tasks = (0..n_tasks)
        .map(|t| {
            let mut rng = seed::derived_rng(seed, &[t as u64]);
            let amp = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::PI);
            let samples = (0..n_points)
                .map(|_| {
                    let x: f64 = rng.random_range(0.0..1.0);
                    Sample { x: vec![x], y: amp * (2.0 * std::f64::consts::PI * x + phase).sin() }
                })
                .collect();
            TaskRecord { task_id: t, pattern_seed: seed::derive(seed, &[t as u64]), samples }
        })
        .collect();
    MetaDataset {
        space: DesignSpace::new(DesignKind::Allocation, 1, 1).expect("valid space"),
        base_seed: seed,
        tasks,
        split: Split::five_to_one(n_tasks),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: DesignKind,
    #[serde(rename = "I")]
    intersections: usize,
    #[serde(rename = "J")]
    options: usize,
    #[serde(rename = "N")]
    n_tasks: usize,
    #[serde(rename = "M")]
    n_samples: usize,
    split_ratio: [u32; 2],
    base_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: usize,
    pattern_seed: u64,
    x: Vec<f64>,
    y: f64,
}

impl MetaDataset {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Samples per task (taken from the first task).
    pub fn n_samples(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.samples.len())
    }

    pub fn train_tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.split.train.iter().map(|&i| &self.tasks[i])
    }

    pub fn valid_tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.split.valid.iter().map(|&i| &self.tasks[i])
    }

    pub fn to_jsonl(&self) -> Result<String, DatasetError> {
        let manifest = Manifest {
            kind: self.space.kind,
            intersections: self.space.intersections,
            options: self.space.options,
            n_tasks: self.n_tasks(),
            n_samples: self.n_samples(),
            split_ratio: [5, 1],
            base_seed: self.base_seed,
        };
        let mut out = io::to_canonical_json(&manifest)?;
        out.push('\n');
        for task in &self.tasks {
            for s in &task.samples {
                let record = Record { task: task.task_id, pattern_seed: task.pattern_seed, x: s.x.clone(), y: s.y };
                out.push_str(&io::to_canonical_json(&record)?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(DatasetError::NoTasks)?;
        let manifest: Manifest =
            serde_json::from_str(head).map_err(|e| DatasetError::Parse { line: 1, message: e.to_string() })?;
        let space = DesignSpace::new(manifest.kind, manifest.intersections, manifest.options)
            .map_err(|e| DatasetError::Parse { line: 1, message: e.to_string() })?;
        if manifest.n_tasks == 0 {
            return Err(DatasetError::NoTasks);
        }

        let mut tasks: Vec<TaskRecord> = Vec::with_capacity(manifest.n_tasks);
        for (line, text) in lines {
            let record: Record =
                serde_json::from_str(text).map_err(|e| DatasetError::Parse { line, message: e.to_string() })?;
            let bad = |message: String| DatasetError::Parse { line, message };
            if record.x.len() != space.dim() {
                return Err(bad(format!("design has {} values, expected {}", record.x.len(), space.dim())));
            }
            if !record.y.is_finite() {
                return Err(bad("non-finite measure".into()));
            }
            match tasks.last_mut() {
                Some(last) if last.task_id == record.task => {
                    if last.pattern_seed != record.pattern_seed {
                        return Err(bad(format!("pattern seed changed within task {}", record.task)));
                    }
                    last.samples.push(Sample { x: record.x, y: record.y });
                }
                _ => {
                    if record.task != tasks.len() {
                        return Err(bad(format!("task {} out of order, expected {}", record.task, tasks.len())));
                    }
                    tasks.push(TaskRecord {
                        task_id: record.task,
                        pattern_seed: record.pattern_seed,
                        samples: vec![Sample { x: record.x, y: record.y }],
                    });
                }
            }
        }
        if tasks.is_empty() {
            return Err(DatasetError::NoTasks);
        }
        if tasks.len() != manifest.n_tasks {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("manifest declares {} tasks, found {}", manifest.n_tasks, tasks.len()),
            });
        }
        if let Some(t) = tasks.iter().find(|t| t.samples.len() != manifest.n_samples) {
            return Err(DatasetError::Parse {
                line: 1,
                message: format!("task {} has {} samples, manifest declares {}", t.task_id, t.samples.len(), manifest.n_samples),
            });
        }
        let split = Split::five_to_one(tasks.len());
        Ok(Self { space, base_seed: manifest.base_seed, tasks, split })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Bounds on context and target sizes for meta-training batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub min_context: usize,
    pub max_context: usize,
    pub min_target: usize,
    /// Nominal samples per task the bounds refer to.
    pub total: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { batch_size: 16, min_context: 10, max_context: 190, min_target: 10, total: 200 }
    }
}

/// Context/target size bounds after adapting to the samples available.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeBounds {
    pub min_context: usize,
    pub max_context: usize,
    pub min_target: usize,
    pub total: usize,
}

impl BatchSpec {
    /// Rescales the bounds proportionally when a task has fewer than `total`
    /// samples.
    pub fn bounds_for(&self, available: usize) -> Result<SizeBounds, DatasetError> {
        if available < 4 {
            return Err(DatasetError::TooSmall { what: "samples per task for batching", need: 4, got: available });
        }
        if self.min_context == 0 || self.min_target == 0 || self.min_context > self.max_context || self.total == 0 {
            return Err(DatasetError::Batch(format!("{self:?}")));
        }
        if available >= self.total {
            if self.max_context + self.min_target > self.total {
                return Err(DatasetError::Batch(format!("max context + min target exceeds total in {self:?}")));
            }
            return Ok(SizeBounds {
                min_context: self.min_context,
                max_context: self.max_context,
                min_target: self.min_target,
                total: self.total,
            });
        }
        let scale = |v: usize| ((v * available) as f64 / self.total as f64).round() as usize;
        let min_target = scale(self.min_target).max(1);
        let min_context = scale(self.min_context).max(1);
        let max_context = scale(self.max_context).max(min_context).min(available - min_target);
        let min_context = min_context.min(max_context);
        Ok(SizeBounds { min_context, max_context, min_target, total: available })
    }
}

/// Draws a disjoint context/target split from one task.
pub fn sample_split<R: Rng + ?Sized>(
    task: &TaskRecord,
    bounds: &SizeBounds,
    rng: &mut R,
) -> ContextTargetSplit {
    let n_context = rng.random_range(bounds.min_context..=bounds.max_context);
    let n_target = rng.random_range(bounds.min_target..=bounds.total - n_context);
    let rows = index::sample(rng, task.samples.len(), n_context + n_target).into_vec();
    let points = task.points();
    ContextTargetSplit {
        task: task.task_id,
        context: points.select(&rows[..n_context]),
        target: points.select(&rows[n_context..]),
    }
}

/// A meta-training batch: each element picks a train task uniformly and
/// splits a random subset of its samples into context and target.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &MetaDataset,
    spec: &BatchSpec,
    rng: &mut R,
) -> Result<Vec<ContextTargetSplit>, DatasetError> {
    if dataset.split.train.is_empty() {
        return Err(DatasetError::TooSmall { what: "train tasks", need: 1, got: 0 });
    }
    let bounds = spec.bounds_for(dataset.n_samples())?;
    Ok((0..spec.batch_size)
        .map(|_| {
            let task = dataset.split.train[rng.random_range(0..dataset.split.train.len())];
            sample_split(&dataset.tasks[task], &bounds, rng)
        })
        .collect())
}
