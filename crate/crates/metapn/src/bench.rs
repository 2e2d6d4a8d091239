//! Multi-seed experiments and the baselines.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::thread;

use anyhow::{bail, Context};
use metapn_core::meta::TrainConfig;
use metapn_core::metrics;
use metapn_core::mlp::MlpParams;
use metapn_core::propagation::{self, PropagatorParams, MASS_THRESHOLD};
use metapn_core::split::SplitSpec;
use metapn_core::trainer::{self, EpochLog, Problem, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::bundle::{load_bundle, GraphBundle};
use crate::config::{ExperimentConfig, Method};
use crate::runlog;

pub const CSV_HEADER: &str = "method,dataset,shots,k,runs,mean,ci95";

/// Aggregate over seeds; accuracies are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub dataset: String,
    pub shots: usize,
    pub k: usize,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl RunResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.2},{:.2}",
            self.method, self.dataset, self.shots, self.k, self.runs, self.mean, self.ci95
        )
    }
}

/// Mean and `1.96 · s / √n` with the sample standard deviation `s`; the
/// interval is zero for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

fn problem<'a>(
    bundle: &'a GraphBundle,
    adjacency: &'a metapn_core::CsrMatrix,
    split: &'a SplitSpec,
) -> Problem<'a> {
    Problem {
        adjacency,
        features: &bundle.features,
        labels: &bundle.labels,
        classes: bundle.c(),
        split,
    }
}

fn test_accuracy(theta: &MlpParams, bundle: &GraphBundle, split: &SplitSpec) -> anyhow::Result<f64> {
    let pred = trainer::predict(theta, &bundle.features, &split.test)?;
    let truth: Vec<usize> = split.test.iter().map(|&i| bundle.labels[i]).collect();
    Ok(metrics::accuracy(&pred, &truth))
}

/// Plain label propagation: `K` steps of the normalized adjacency from the
/// seed labels, argmax per test node. Test nodes that receive no label mass
/// are assigned the most frequent training class.
pub fn run_lp_baseline(bundle: &GraphBundle, split: &SplitSpec, k_max: usize) -> anyhow::Result<f64> {
    let t = bundle.adjacency()?.sym_normalize_with_self_loops()?;
    let y0 = propagation::seed_labels(&split.train_labels(&bundle.labels), bundle.n(), bundle.c())?;
    let trace = propagation::power_iterate(&t, &y0, k_max)?;
    let scores = trace.last();

    let mut counts = vec![0.0; bundle.c()];
    for &i in &split.train {
        counts[bundle.labels[i]] += 1.0;
    }
    let majority = metrics::argmax(&counts);

    let hits = split
        .test
        .iter()
        .filter(|&&i| {
            let row = scores.row(i);
            let pred = if row.iter().sum::<f64>() < MASS_THRESHOLD {
                majority
            } else {
                metrics::argmax(row)
            };
            pred == bundle.labels[i]
        })
        .count();
    Ok(if split.test.is_empty() {
        0.0
    } else {
        hits as f64 / split.test.len() as f64
    })
}

/// Output of one method on one split.
#[derive(Debug, Clone)]
pub struct MethodRun {
    /// Test accuracy as a fraction.
    pub accuracy: f64,
    pub log: Vec<EpochLog>,
    /// Trained parameters; `None` for label propagation.
    pub params: Option<(MlpParams, PropagatorParams)>,
}

impl MethodRun {
    fn from_outcome(out: TrainOutcome, bundle: &GraphBundle, split: &SplitSpec) -> anyhow::Result<Self> {
        Ok(Self {
            accuracy: test_accuracy(&out.state.theta, bundle, split)?,
            log: out.log,
            params: Some((out.state.theta, out.state.phi)),
        })
    }
}

/// Trains `method` on one split and scores it on the test nodes.
pub fn run_method(
    bundle: &GraphBundle,
    method: Method,
    split: &SplitSpec,
    cfg: &TrainConfig,
    alpha: f64,
) -> anyhow::Result<MethodRun> {
    if method == Method::Lp {
        return Ok(MethodRun {
            accuracy: run_lp_baseline(bundle, split, cfg.k_max)?,
            log: Vec::new(),
            params: None,
        });
    }
    let adjacency = bundle.adjacency()?;
    let p = problem(bundle, &adjacency, split);
    let out = match method {
        Method::MetaPn => trainer::train(&p, cfg)?,
        Method::StaticLp => trainer::train_static(&p, cfg, alpha)?,
        Method::Mlp => trainer::train_supervised(&p, cfg)?,
        Method::Lp => unreachable!("handled above"),
    };
    MethodRun::from_outcome(out, bundle, split)
}

/// Target model trained on fixed PPR pseudo-labels, then fine-tuned.
pub fn run_static_lp(
    bundle: &GraphBundle,
    split: &SplitSpec,
    cfg: &TrainConfig,
    alpha: f64,
) -> anyhow::Result<f64> {
    Ok(run_method(bundle, Method::StaticLp, split, cfg, alpha)?.accuracy)
}

/// Runs every seed of `cfg` on an already loaded bundle. Seeds are spread
/// over worker threads; results come back in seed order.
pub fn run_seeds(bundle: &GraphBundle, cfg: &ExperimentConfig) -> anyhow::Result<Vec<MethodRun>> {
    let workers = cfg
        .threads
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, cfg.seeds.len().max(1));
    let run_one = |seed: u64| -> anyhow::Result<MethodRun> {
        let split = bundle.sample_split(cfg.shots, cfg.val_per_class, seed)?;
        run_method(bundle, cfg.method, &split, &cfg.train_config(seed), cfg.alpha)
    };
    let mut slots: Vec<Option<anyhow::Result<MethodRun>>> = Vec::new();
    slots.resize_with(cfg.seeds.len(), || None);
    thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_one = &run_one;
                s.spawn(move || {
                    (w..cfg.seeds.len())
                        .step_by(workers)
                        .map(|i| (i, run_one(cfg.seeds[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .zip(&cfg.seeds)
        .map(|(r, seed)| {
            r.expect("every seed is assigned to a worker")
                .with_context(|| format!("run with seed {seed} failed"))
        })
        .collect()
}

/// Aggregates per-seed runs into a [`RunResult`].
pub fn summarize(bundle: &GraphBundle, cfg: &ExperimentConfig, runs: &[MethodRun]) -> RunResult {
    let accuracies: Vec<f64> = runs.iter().map(|r| 100.0 * r.accuracy).collect();
    let (mean, ci95) = mean_ci95(&accuracies);
    RunResult {
        method: cfg.method,
        dataset: bundle.name().to_owned(),
        shots: cfg.shots,
        k: cfg.k_max,
        runs: runs.len(),
        seeds: cfg.seeds.clone(),
        accuracies,
        mean,
        ci95,
    }
}

/// Appends the result to `results.csv` and `results.jsonl` and writes one
/// training log per seed under `logs/`.
pub fn write_outputs(out_dir: &Path, result: &RunResult, runs: &[MethodRun]) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let csv_path = out_dir.join("results.csv");
    let fresh = fs::metadata(&csv_path).map_or(true, |m| m.len() == 0);
    let mut csv = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)
        .with_context(|| format!("opening {}", csv_path.display()))?;
    if fresh {
        writeln!(csv, "{CSV_HEADER}")?;
    }
    writeln!(csv, "{}", result.csv_row())?;

    let jsonl_path = out_dir.join("results.jsonl");
    let mut jsonl = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&jsonl_path)
        .with_context(|| format!("opening {}", jsonl_path.display()))?;
    writeln!(jsonl, "{}", serde_json::to_string(result)?)?;

    let log_dir = out_dir.join("logs");
    for (run, seed) in runs.iter().zip(&result.seeds) {
        if run.log.is_empty() {
            continue;
        }
        fs::create_dir_all(&log_dir)?;
        let name = format!(
            "{}-{}-shots{}-k{}-seed{}.jsonl",
            result.method, result.dataset, result.shots, result.k, seed
        );
        runlog::write_log_file(log_dir.join(name), &run.log)?;
    }
    Ok(())
}

/// Loads the bundle, runs every seed and writes outputs when `out_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<RunResult> {
    let bundle = load_bundle(&cfg.bundle)
        .with_context(|| format!("loading bundle {}", cfg.bundle.display()))?;
    run_experiment_on(&bundle, cfg)
}

pub fn run_experiment_on(bundle: &GraphBundle, cfg: &ExperimentConfig) -> anyhow::Result<RunResult> {
    let runs = run_seeds(bundle, cfg)?;
    let result = summarize(bundle, cfg, &runs);
    if let Some(dir) = &cfg.out_dir {
        write_outputs(dir, &result, &runs)?;
    }
    Ok(result)
}

/// One experiment per `(method, K)` cell, methods outermost.
pub fn ablate_k(
    cfg: &ExperimentConfig,
    methods: &[Method],
    k_values: &[usize],
) -> anyhow::Result<Vec<RunResult>> {
    if let Some(m) = methods
        .iter()
        .find(|m| !matches!(m, Method::MetaPn | Method::StaticLp))
    {
        bail!("the K ablation covers meta-pn and static-lp only, got {m}");
    }
    let bundle = load_bundle(&cfg.bundle)
        .with_context(|| format!("loading bundle {}", cfg.bundle.display()))?;
    let mut table = Vec::with_capacity(methods.len() * k_values.len());
    for &method in methods {
        for &k_max in k_values {
            let cell = ExperimentConfig {
                method,
                k_max,
                ..cfg.clone()
            };
            table.push(run_experiment_on(&bundle, &cell).with_context(|| format!("{method} at K = {k_max}"))?);
        }
    }
    Ok(table)
}
