//! The pipeline commands. Each writes its outputs, plus the effective
//! config, into one output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use tlopt_core::anp::{train, AnpModel};
use tlopt_core::bo::{random_search, run_bo, AcquisitionConfig, AcquisitionKind, BoTrace, GpSurrogate};
use tlopt_core::dataset::{collect, MetaDataset};
use tlopt_core::design::Design;
use tlopt_core::objective::{TrafficTask, TrafficTasks};
use tlopt_core::sim::{sample_pattern, TrafficPattern};
use tlopt_core::{io, par, seed};

use crate::config::ExperimentConfig;
use crate::report;
use crate::CliError;

const TAG_TASK_PATTERN: u64 = 0x7461_736b;
const TAG_UNSEEN_PATTERN: u64 = 0x756e_7365;
const TAG_RUN: u64 = 0x7275_6e73;
const TAG_EVAL: u64 = 0x6576_616c;

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACES_DIR: &str = "traces";
pub const FAILURES_FILE: &str = "failures.csv";

/// Optimization methods compared by `optimize`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    AnpBo,
    Random,
    GpUcb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::AnpBo, Method::Random, Method::GpUcb];

    pub fn name(self) -> &'static str {
        match self {
            Method::AnpBo => "anp-bo",
            Method::Random => "random",
            Method::GpUcb => "gp-ucb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Creates `out`, refusing to reuse a non-empty directory unless `overwrite`.
pub fn prepare_out_dir(out: &Path, overwrite: bool) -> Result<(), CliError> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !overwrite {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --overwrite to reuse it",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    io::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn write_config(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    write(&out.join(CONFIG_FILE), &cfg.to_json())
}

pub fn task_pattern_file(n: usize) -> String {
    format!("task_{n:04}.json")
}

pub fn unseen_pattern_file(k: usize) -> String {
    format!("unseen_{k:04}.json")
}

pub fn pattern_seeds(cfg: &ExperimentConfig) -> (Vec<u64>, Vec<u64>) {
    let base = cfg.dataset.base_seed;
    let tasks = (0..cfg.dataset.n_tasks).map(|n| seed::derive(base, &[TAG_TASK_PATTERN, n as u64])).collect();
    let unseen = (0..cfg.test.n_unseen_patterns).map(|k| seed::derive(base, &[TAG_UNSEEN_PATTERN, k as u64])).collect();
    (tasks, unseen)
}

/// Writes `N` training patterns and `n_unseen_patterns` held-out patterns.
pub fn gen_patterns(cfg: &ExperimentConfig, out: &Path, overwrite: bool) -> Result<Vec<PathBuf>, CliError> {
    prepare_out_dir(out, overwrite)?;
    let network = cfg.network().map_err(|e| CliError::Config(e.to_string()))?;
    let (tasks, unseen) = pattern_seeds(cfg);
    let mut all: Vec<u64> = tasks.iter().chain(&unseen).copied().collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(anyhow!("pattern seed collision; choose another base seed").into());
    }
    let jobs: Vec<(String, u64)> = tasks
        .iter()
        .enumerate()
        .map(|(n, &s)| (task_pattern_file(n), s))
        .chain(unseen.iter().enumerate().map(|(k, &s)| (unseen_pattern_file(k), s)))
        .collect();
    let horizon = cfg.sim.horizon as f64;
    let texts = par::map_slice(&jobs, |(_, s)| -> anyhow::Result<String> {
        Ok(sample_pattern(&network, horizon, *s)?.to_json()?)
    });
    let mut written = Vec::with_capacity(jobs.len());
    for ((name, _), text) in jobs.iter().zip(texts) {
        let path = out.join(name);
        write(&path, &text?)?;
        written.push(path);
    }
    write_config(cfg, out)?;
    eprintln!("wrote {} task and {} unseen patterns to {}", tasks.len(), unseen.len(), out.display());
    Ok(written)
}

fn load_pattern(path: &Path) -> anyhow::Result<TrafficPattern> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrafficPattern::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_patterns(dir: &Path, names: impl Iterator<Item = String>, cfg: &ExperimentConfig) -> anyhow::Result<Vec<TrafficPattern>> {
    let network = cfg.network()?;
    names
        .map(|name| {
            let path = dir.join(&name);
            let p = load_pattern(&path)?;
            p.validate(&network, cfg.sim.horizon as f64).with_context(|| format!("validating {}", path.display()))?;
            Ok(p)
        })
        .collect()
}

/// Evaluates `M` random designs on each of the `N` task patterns.
pub fn cmd_collect(cfg: &ExperimentConfig, patterns: &Path, out: &Path, overwrite: bool) -> Result<MetaDataset, CliError> {
    prepare_out_dir(out, overwrite)?;
    let patterns = load_patterns(patterns, (0..cfg.dataset.n_tasks).map(task_pattern_file), cfg)?;
    let tasks = TrafficTasks { network: cfg.network()?, patterns, sim: cfg.sim.clone() };
    let dataset = collect(&tasks, cfg.space()?, cfg.dataset.n_samples, cfg.dataset.base_seed)
        .context("collecting the offline dataset")?;
    for task in &dataset.tasks {
        let best = task.samples.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
        eprintln!("task {:>4}: {} samples, best {best}", task.task_id, task.samples.len());
    }
    dataset.save(&out.join(DATASET_FILE)).context("writing the dataset")?;
    write_config(cfg, out)?;
    Ok(dataset)
}

fn metrics_csv(rows: &[tlopt_core::anp::MetricRow]) -> String {
    let mut out = String::from("step,train_elbo,valid_ll\n");
    for r in rows {
        let elbo = r.train_elbo.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.step, elbo, r.valid_ll);
    }
    out
}

/// Meta-trains the surrogate and writes the best checkpoint and metrics.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: &Path, out: &Path, overwrite: bool) -> Result<AnpModel, CliError> {
    prepare_out_dir(out, overwrite)?;
    let data = MetaDataset::load(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    if data.space != cfg.space()? {
        return Err(CliError::Config(format!("dataset design space {:?} does not match the config", data.space)));
    }
    write_config(cfg, out)?;
    match train(&data, &cfg.train_config()) {
        Ok(outcome) => {
            write(&out.join(METRICS_FILE), &metrics_csv(&outcome.history))?;
            outcome.model.save(&out.join(CHECKPOINT_FILE)).context("writing the checkpoint")?;
            eprintln!("best validation log-likelihood at step {}", outcome.best_step);
            Ok(outcome.model)
        }
        Err(err) => {
            write(&out.join(METRICS_FILE), &metrics_csv(&err.history))?;
            Err(anyhow::Error::new(err.source).context("training failed").into())
        }
    }
}

pub fn trace_stem(method: Method, pattern: usize, repeat: usize) -> String {
    format!("{}__p{pattern:02}__r{repeat:02}", method.name())
}

/// One (pattern, method, repeat) run. Every method sees the same seed for a
/// given pattern and repeat.
fn run_one(
    cfg: &ExperimentConfig,
    model: &AnpModel,
    task: &TrafficTask,
    method: Method,
    pattern: usize,
    repeat: usize,
) -> Result<BoTrace, tlopt_core::bo::BoFailure> {
    let run_seed = seed::derive(cfg.bo.seed, &[TAG_RUN, pattern as u64, repeat as u64]);
    let space = cfg.space().expect("validated");
    let bo = cfg.bo_config(run_seed);
    let mut trial = 0u64;
    let objective = |x: &Design| {
        let noise_seed = seed::derive(run_seed, &[TAG_EVAL, trial]);
        trial += 1;
        task.evaluate(x, noise_seed)
    };
    match method {
        Method::AnpBo => run_bo(model, objective, &space, &bo, &cfg.acquisition()),
        Method::Random => random_search(objective, bo.budget, &space, run_seed),
        Method::GpUcb => {
            let acq = AcquisitionConfig { kind: AcquisitionKind::Ucb, beta: cfg.bo.beta };
            run_bo(&GpSurrogate, objective, &space, &bo, &acq)
        }
    }
}

/// Runs every method on every unseen pattern, writes the traces and the
/// aggregate report. Failed runs are listed in `failures.csv` and make the
/// command fail after all other runs finish.
pub fn cmd_optimize(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    patterns: &Path,
    out: &Path,
    overwrite: bool,
) -> Result<report::Report, CliError> {
    prepare_out_dir(out, overwrite)?;
    let model = AnpModel::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if model.params.architecture().x_dim != cfg.space()?.dim() {
        return Err(CliError::Config("checkpoint input dimension does not match the config".into()));
    }
    let unseen = load_patterns(patterns, (0..cfg.test.n_unseen_patterns).map(unseen_pattern_file), cfg)?;
    let network = cfg.network()?;
    let tasks: Vec<TrafficTask> = unseen
        .into_iter()
        .map(|pattern| TrafficTask { network: network.clone(), pattern, sim: cfg.sim.clone() })
        .collect();

    let traces_dir = out.join(TRACES_DIR);
    if traces_dir.exists() {
        fs::remove_dir_all(&traces_dir).with_context(|| format!("clearing {}", traces_dir.display()))?;
    }
    fs::create_dir_all(&traces_dir)?;
    let _ = fs::remove_file(out.join(FAILURES_FILE));
    write_config(cfg, out)?;

    let runs: Vec<(usize, Method, usize)> = (0..tasks.len())
        .flat_map(|p| Method::ALL.into_iter().flat_map(move |m| (0..cfg.test.n_repeats).map(move |r| (p, m, r))))
        .collect();
    let results = par::map_slice(&runs, |&(p, m, r)| run_one(cfg, &model, &tasks[p], m, p, r));

    let mut failures = String::new();
    for (&(p, m, r), result) in runs.iter().zip(results) {
        let stem = trace_stem(m, p, r);
        match result {
            Ok(trace) => {
                write(&traces_dir.join(format!("{stem}.csv")), &trace.to_csv())?;
                if let Some(json) = trace.incumbent_json()? {
                    write(&traces_dir.join(format!("{stem}.incumbent.json")), &json)?;
                }
            }
            Err(failure) => {
                write(&traces_dir.join(format!("{stem}.partial.csv")), &failure.trace.to_csv())?;
                let msg = failure.error.to_string().replace(['\n', ','], " ");
                let _ = writeln!(failures, "{},{p},{r},{}", m.name(), msg);
                eprintln!("run {stem} failed: {}", failure.error);
            }
        }
    }
    let rep = report::aggregate(&traces_dir)?;
    report::write_report(&rep, out)?;
    if !failures.is_empty() {
        write(&out.join(FAILURES_FILE), &format!("method,pattern,repeat,error\n{failures}"))?;
        let n = failures.lines().count();
        return Err(anyhow!("{n} of {} runs failed; see {}", runs.len(), out.join(FAILURES_FILE).display()).into());
    }
    Ok(rep)
}

/// Rebuilds the report of a finished `optimize` run from its traces.
pub fn cmd_report(run_dir: &Path) -> Result<report::Report, CliError> {
    let traces = run_dir.join(TRACES_DIR);
    if !traces.is_dir() {
        return Err(CliError::Config(format!("{} has no traces directory", run_dir.display())));
    }
    let rep = report::aggregate(&traces)?;
    report::write_report(&rep, run_dir)?;
    Ok(rep)
}
