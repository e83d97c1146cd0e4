use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::diagnostics::{write_atomic, Trace};
use crate::optimizers::{run, Network, RunSpec};
use crate::problems::{Problem, Reference};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub label: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl AggregateStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub final_residual: Option<AggregateStats>,
    pub final_grad_norm_sq: Option<AggregateStats>,
    pub final_consensus_error: Option<AggregateStats>,
    pub bits_total: Option<AggregateStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    /// `(label, seed, csv path)` for each completed run.
    pub traces: Vec<(String, u64, PathBuf)>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<AlgorithmSummary>,
}

impl ExperimentOutcome {
    pub fn runs(&self) -> usize {
        self.traces.len() + self.failures.len()
    }
}

#[derive(Serialize, Deserialize)]
struct CachedReference {
    fingerprint: String,
    seed: u64,
    reference: Reference,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn trace_stem(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}")
}

fn reference_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("reference_seed{seed}.json"))
}

/// Problem and optimum for `seed`, reusing `dir`'s cached optimum when its
/// fingerprint matches and writing it otherwise.
fn instance_cached(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
) -> Result<(Problem, Reference), HarnessError> {
    let problem = cfg.problem.build(seed, None)?;
    let fingerprint = problem.fingerprint();
    let path = reference_path(dir, seed);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cached) = serde_json::from_str::<CachedReference>(&text) {
            if cached.fingerprint == fingerprint && cached.reference.x_star.len() == problem.d() {
                return Ok((problem, cached.reference));
            }
        }
    }
    let reference = problem
        .reference(cfg.reference.tol, cfg.reference.max_iters)
        .map_err(|e| HarnessError::Io(format!("reference optimum for seed {seed}: {e}")))?;
    let cached = CachedReference {
        fingerprint,
        seed,
        reference: reference.clone(),
    };
    let json = serde_json::to_vec_pretty(&cached).expect("reference serializes");
    write_atomic(&path, &json).map_err(|e| io_err(&path, e))?;
    Ok((problem, reference))
}

/// Computes (or loads from cache) `x*` and `f*` for every seed.
pub fn compute_references(
    cfg: &ExperimentConfig,
    output_dir: &Path,
) -> Result<Vec<(u64, Reference)>, HarnessError> {
    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    cfg.seeds
        .iter()
        .map(|&seed| instance_cached(cfg, seed, output_dir).map(|(_, r)| (seed, r)))
        .collect()
}

struct Job<'a> {
    label: &'a str,
    algorithm: &'a crate::optimizers::Algorithm,
    seed: u64,
    instance: usize,
}

/// Runs every (algorithm, seed) pair and writes `<label>_seed<seed>.csv`
/// with a `.json` metadata sidecar, plus `summary.json` and
/// `failures.json`. A failing run is recorded and does not stop the others.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    output_dir: &Path,
) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(output_dir).map_err(|e| io_err(output_dir, e))?;
    let topology = cfg.topology.build()?;
    let network = Network::new(&topology).map_err(|e| HarnessError::Io(e.to_string()))?;

    let mut failures = Vec::new();
    let mut instances = Vec::new();
    for &seed in &cfg.seeds {
        match instance_cached(cfg, seed, output_dir) {
            Ok(inst) => instances.push((seed, inst)),
            Err(e) => {
                for entry in &cfg.algorithms {
                    failures.push(RunFailure {
                        label: entry.label.clone(),
                        seed,
                        error: e.to_string(),
                    });
                }
            }
        }
    }

    let mut jobs = Vec::new();
    for entry in &cfg.algorithms {
        for (idx, (seed, _)) in instances.iter().enumerate() {
            jobs.push(Job {
                label: &entry.label,
                algorithm: &entry.algorithm,
                seed: *seed,
                instance: idx,
            });
        }
    }

    let results: Mutex<Vec<Option<Result<(Trace, PathBuf), String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let (_, (problem, reference)) = &instances[job.instance];
                let spec = RunSpec {
                    noise: cfg.noise,
                    rounds: cfg.rounds(),
                    seed: job.seed,
                    init: cfg.init,
                    reference: Some(reference),
                    lyapunov: cfg.lyapunov,
                    ..RunSpec::new(job.label, job.algorithm.clone(), problem, &network)
                };
                let outcome = run(&spec).map_err(|e| e.to_string()).and_then(|trace| {
                    let stem = trace_stem(job.label, job.seed);
                    let csv = output_dir.join(format!("{stem}.csv"));
                    trace.write_csv(&csv).map_err(|e| e.to_string())?;
                    trace
                        .write_metadata(&output_dir.join(format!("{stem}.json")))
                        .map_err(|e| e.to_string())?;
                    Ok((trace, csv))
                });
                results.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });

    let mut traces = Vec::new();
    let mut finished: Vec<(String, u64, Trace)> = Vec::new();
    for (job, res) in jobs
        .iter()
        .zip(results.into_inner().expect("no worker panicked"))
    {
        match res.expect("every job ran") {
            Ok((trace, csv)) => {
                traces.push((job.label.to_string(), job.seed, csv));
                finished.push((job.label.to_string(), job.seed, trace));
            }
            Err(error) => failures.push(RunFailure {
                label: job.label.to_string(),
                seed: job.seed,
                error,
            }),
        }
    }

    let summary: Vec<AlgorithmSummary> = cfg
        .algorithms
        .iter()
        .map(|entry| {
            let mine: Vec<_> = finished
                .iter()
                .filter(|(l, _, _)| *l == entry.label)
                .collect();
            let stat = |f: &dyn Fn(&Trace) -> f64| {
                AggregateStats::of(&mine.iter().map(|(_, _, t)| f(t)).collect::<Vec<_>>())
            };
            AlgorithmSummary {
                label: entry.label.clone(),
                seeds: mine.iter().map(|(_, s, _)| *s).collect(),
                final_residual: stat(&|t| t.last().residual),
                final_grad_norm_sq: stat(&|t| t.last().grad_norm_sq),
                final_consensus_error: stat(&|t| t.last().consensus_error),
                bits_total: stat(&|t| t.last().bits_cumulative as f64),
            }
        })
        .collect();

    write_json(output_dir, "summary.json", &summary)?;
    write_json(output_dir, "failures.json", &failures)?;

    let outcome = ExperimentOutcome {
        output_dir: output_dir.to_path_buf(),
        traces,
        failures,
        summary,
    };
    if outcome.traces.is_empty() {
        return Err(HarnessError::AllRunsFailed(outcome.runs()));
    }
    Ok(outcome)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), HarnessError> {
    let path = dir.join(name);
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(&path, e))?;
    write_atomic(&path, &bytes).map_err(|e| io_err(&path, e))
}
