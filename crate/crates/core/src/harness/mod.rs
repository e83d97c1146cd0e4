//! JSON experiment configs, trace persistence, multi-seed runs and the
//! agent-count sweep.
//!
//! A config looks like
//!
//! ```json
//! {
//!   "problem": {"kind": "classification", "n": 6, "m": 200, "d": 10, "lambda": 0.001, "alpha": 1.0},
//!   "noise": {"variance": 0.5},
//!   "topology": {"kind": "six_agent"},
//!   "algorithms": [
//!     {"label": "DSGD", "algorithm": {"kind": "dsgd", "step": 0.05}}
//!   ],
//!   "rounds": 10000,
//!   "seeds": [0]
//! }
//! ```
//!
//! Unknown keys are rejected everywhere.

mod experiment;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{CompressorKind, CompressorSpec};
use crate::optimizers::{Algorithm, InitSpec, Network};
use crate::problems::{
    make_classification_problem, make_quadratic_problem, NoiseSpec, Problem, QuadraticSpec,
    Reference,
};
use crate::rng::Streams;
use crate::topology::{GraphSpec, Topology};

pub use experiment::{
    compute_references, run_experiment, AggregateStats, AlgorithmSummary, ExperimentOutcome,
    RunFailure,
};
pub use sweep::{speedup_sweep, SweepRow, SweepSummary};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CPSGD_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error("every run failed ({0} runs)")]
    AllRunsFailed(usize),
    #[error("sweep: {0}")]
    Sweep(String),
}

fn invalid(path: impl Into<String>, message: impl ToString) -> HarnessError {
    HarnessError::Validation {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Classification {
        n: usize,
        m: usize,
        d: usize,
        lambda: f64,
        alpha: f64,
    },
    Quadratic {
        n: usize,
        d: usize,
        eigen_min: f64,
        eigen_max: f64,
        heterogeneity: f64,
        #[serde(default)]
        shared_curvature: bool,
    },
    /// A dataset file written by `Problem::save_dataset`.
    Dataset { path: PathBuf },
}

impl ProblemConfig {
    /// Agent count, when known without reading a file.
    pub fn n(&self) -> Option<usize> {
        match self {
            ProblemConfig::Classification { n, .. } | ProblemConfig::Quadratic { n, .. } => {
                Some(*n)
            }
            ProblemConfig::Dataset { .. } => None,
        }
    }

    /// The problem instance for `seed`, optionally with a different agent
    /// count (datasets are truncated).
    pub fn build(&self, seed: u64, n_override: Option<usize>) -> Result<Problem, HarnessError> {
        let streams = Streams::new(seed);
        let built = match self {
            ProblemConfig::Classification {
                n,
                m,
                d,
                lambda,
                alpha,
            } => make_classification_problem(
                n_override.unwrap_or(*n),
                *m,
                *d,
                *lambda,
                *alpha,
                &streams,
            ),
            ProblemConfig::Quadratic {
                n,
                d,
                eigen_min,
                eigen_max,
                heterogeneity,
                shared_curvature,
            } => {
                let spec = QuadraticSpec {
                    eigen_min: *eigen_min,
                    eigen_max: *eigen_max,
                    heterogeneity: *heterogeneity,
                    shared_curvature: *shared_curvature,
                };
                make_quadratic_problem(n_override.unwrap_or(*n), *d, &spec, &streams)
            }
            ProblemConfig::Dataset { path } => {
                Problem::load_dataset(path).and_then(|p| match n_override {
                    Some(k) if k != p.n() => p.truncated(k),
                    _ => Ok(p),
                })
            }
        };
        built.map_err(|e| invalid("problem", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    /// The fixed six-agent graph of the classification experiment.
    SixAgent,
    Inline {
        n: usize,
        edges: Vec<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    File {
        path: PathBuf,
    },
    RingChords {
        n: usize,
    },
    Complete {
        n: usize,
    },
}

impl TopologyConfig {
    pub fn build(&self) -> Result<Topology, HarnessError> {
        let t = match self {
            TopologyConfig::SixAgent => Ok(Topology::six_agent()),
            TopologyConfig::Inline { n, edges, weights } => Topology::from_spec(&GraphSpec {
                n: *n,
                edges: edges.clone(),
                weights: weights.clone(),
            }),
            TopologyConfig::File { path } => Topology::from_file(path),
            TopologyConfig::RingChords { n } => Topology::ring_with_chords(*n),
            TopologyConfig::Complete { n } => Topology::complete(*n),
        };
        t.map_err(|e| invalid("topology", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    /// Used in output file names: letters, digits, `-`, `_`, `.`.
    pub label: String,
    pub algorithm: Algorithm,
}

/// Tolerances for the numerically solved optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 200_000,
        }
    }
}

/// CP-SGD settings for the agent-count sweep; `ω = β₂√T/√n` per count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub compressor: CompressorKind,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default = "NoiseSpec::none")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub init: InitSpec,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmEntry>,
    /// Signed so that a negative value is reported as a validation error
    /// rather than a parse error.
    pub rounds: i64,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub lyapunov: bool,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !label.starts_with('.')
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn rounds(&self) -> u64 {
        self.rounds.max(0) as u64
    }

    /// Resolves relative file paths against `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ProblemConfig::Dataset { path } = &mut self.problem {
            fix(path);
        }
        if let TopologyConfig::File { path } = &mut self.topology {
            fix(path);
        }
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
    }

    /// Checks every referenced spec with its module constructor.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.rounds < 1 {
            return Err(invalid(
                "rounds",
                format!("must be at least 1, got {}", self.rounds),
            ));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        self.noise.validate().map_err(|e| invalid("noise", e))?;
        if !(self.reference.tol > 0.0) || self.reference.max_iters == 0 {
            return Err(invalid("reference", "tol and max_iters must be positive"));
        }
        let topology = self.topology.build()?;
        let (n, d) = match &self.problem {
            ProblemConfig::Classification { n, d, .. } | ProblemConfig::Quadratic { n, d, .. } => {
                // a throwaway instance checks the remaining parameters
                self.problem.build(0, Some(1))?;
                (*n, *d)
            }
            ProblemConfig::Dataset { .. } => {
                let p = self.problem.build(0, None)?;
                (p.n(), p.d())
            }
        };
        if topology.n() != n {
            return Err(invalid(
                "topology",
                format!("graph has {} agents but the problem has {n}", topology.n()),
            ));
        }
        Network::new(&topology).map_err(|e| invalid("topology", e))?;

        let mut labels = std::collections::BTreeSet::new();
        for (i, entry) in self.algorithms.iter().enumerate() {
            let at = |field: &str| format!("algorithms[{i}].{field}");
            if !valid_label(&entry.label) {
                return Err(invalid(
                    at("label"),
                    format!("`{}` is not a safe file name stem", entry.label),
                ));
            }
            if !labels.insert(entry.label.as_str()) {
                return Err(invalid(
                    at("label"),
                    format!("duplicate label `{}`", entry.label),
                ));
            }
            validate_algorithm(&entry.algorithm, d, self.rounds(), &at)?;
        }
        if let Some(s) = &self.sweep {
            let comp = CompressorSpec::from_kind(s.compressor, d)
                .map_err(|e| invalid("sweep.compressor", e))?;
            if !(s.beta1 > 0.0) || !(s.beta2 > 0.0) {
                return Err(invalid("sweep", "beta1 and beta2 must be positive"));
            }
            if !(s.alpha_x > 0.0 && s.alpha_x < 1.0 / comp.r) {
                return Err(invalid(
                    "sweep.alpha_x",
                    format!("{} outside (0, 1/r) = (0, {})", s.alpha_x, 1.0 / comp.r),
                ));
            }
        }
        if self.algorithms.is_empty() && self.sweep.is_none() {
            return Err(invalid(
                "algorithms",
                "nothing to run: no algorithms and no sweep section",
            ));
        }
        Ok(())
    }

    /// Output directory: the override, else the config value, else the
    /// environment variable, else `./runs`.
    pub fn resolve_output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Problem instance and reference optimum for one seed.
    pub fn instance(&self, seed: u64) -> Result<(Problem, Reference), HarnessError> {
        let problem = self.problem.build(seed, None)?;
        let reference = problem
            .reference(self.reference.tol, self.reference.max_iters)
            .map_err(|e| invalid("reference", e))?;
        Ok((problem, reference))
    }
}

fn validate_algorithm(
    alg: &Algorithm,
    d: usize,
    rounds: u64,
    at: &dyn Fn(&str) -> String,
) -> Result<(), HarnessError> {
    let comp = CompressorSpec::from_kind(alg.compressor(), d)
        .map_err(|e| invalid(at("algorithm.compressor"), e))?;
    match alg {
        Algorithm::Dsgd { step } => {
            if !(*step > 0.0) {
                return Err(invalid(at("algorithm.step"), "must be positive"));
            }
        }
        Algorithm::ChocoSgd { gamma, step, .. } => {
            if !(*step > 0.0) {
                return Err(invalid(at("algorithm.step"), "must be positive"));
            }
            if !(*gamma >= 0.0) {
                return Err(invalid(at("algorithm.gamma"), "must be non-negative"));
            }
        }
        Algorithm::CpSgd { schedule, .. } => {
            let a = schedule.alpha_x();
            if !(a > 0.0 && a < 1.0 / comp.r) {
                return Err(invalid(
                    at("algorithm.schedule.alpha_x"),
                    format!("{a} outside (0, 1/r) = (0, {})", 1.0 / comp.r),
                ));
            }
            schedule
                .validate(comp.r)
                .map_err(|e| invalid(at("algorithm.schedule"), e))?;
            if let Some(h) = schedule.horizon() {
                if h < rounds {
                    return Err(invalid(
                        at("algorithm.schedule.rounds"),
                        format!("schedule covers {h} rounds, config asks for {rounds}"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Reads, parses and validates a config file. Relative paths inside it are
/// taken relative to the file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    if let Some(dir) = path.parent() {
        cfg.rebase(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}
