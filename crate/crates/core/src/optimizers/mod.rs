//! Synchronous round updates: the compressed primal–dual method and the
//! DSGD / Choco-SGD baselines, plus the driver that runs them for `T` rounds.

mod rounds;
mod runner;
pub mod schedule;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compression::{CompressionError, CompressorKind};
use crate::diagnostics::DiagnosticsError;
use crate::problems::ProblemError;
use crate::rng::{Domain, Streams};
use crate::topology::{spectral, SpectralData, Topology, TopologyError};

pub use rounds::{choco_sgd_round, cp_sgd_round, dsgd_round};
pub use runner::{run, RunSpec};
pub use schedule::{RoundParams, Schedule};

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule defined for {horizon} rounds, asked for round {round}")]
    ScheduleExhausted { round: u64, horizon: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mixing matrix is not doubly stochastic on the graph: {0}")]
    BadMixingMatrix(String),
    #[error("non-finite iterate after round {round} (agent {agent})")]
    NonFiniteIterate { round: u64, agent: usize },
    #[error("at least one round is required")]
    NoRounds,
    #[error("step sizes must be positive, got {0}")]
    BadStep(String),
    #[error(transparent)]
    Compression(#[from] CompressionError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// How the agents' starting points are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// Each agent independently uniform in `[0,1]^d`.
    #[default]
    UniformBox,
    /// One uniform draw in `[0,1]^d` shared by every agent.
    SharedPoint,
}

impl InitSpec {
    pub fn sample(&self, n: usize, d: usize, streams: &Streams) -> DMatrix<f64> {
        use rand::Rng;
        let mut x = DMatrix::zeros(n, d);
        for i in 0..n {
            let agent = match self {
                InitSpec::UniformBox => i as u64,
                InitSpec::SharedPoint => 0,
            };
            let mut rng = streams.stream(Domain::Init, agent, 0);
            for s in 0..d {
                x[(i, s)] = rng.gen::<f64>();
            }
        }
        x
    }
}

/// Per-agent primal, dual and compression-reference stacks (`n × d`, one row
/// per agent).
///
/// Choco-SGD keeps its public estimates `x̂` in `xc`; `v` stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub xc: DMatrix<f64>,
    pub round: u64,
}

impl SwarmState {
    /// Start at `x0` with zero duals and zero compression references.
    pub fn new(x0: DMatrix<f64>) -> Self {
        let (n, d) = x0.shape();
        Self {
            x: x0,
            v: DMatrix::zeros(n, d),
            xc: DMatrix::zeros(n, d),
            round: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
        m.row(i).transpose()
    }

    pub fn mean_x(&self) -> DVector<f64> {
        self.x.row_mean().transpose()
    }

    /// `‖Σᵢ vᵢ‖_∞`.
    pub fn dual_sum_inf_norm(&self) -> f64 {
        self.v.row_sum().amax()
    }

    fn check_finite(&self) -> Result<(), OptimizerError> {
        for i in 0..self.n() {
            if self
                .x
                .row(i)
                .iter()
                .chain(self.v.row(i).iter())
                .any(|z| !z.is_finite())
            {
                return Err(OptimizerError::NonFiniteIterate {
                    round: self.round,
                    agent: i,
                });
            }
        }
        Ok(())
    }
}

/// What one round cost and produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub bits_sent_total: u64,
    pub grad_calls: u64,
    /// `ḡˢ_k`, the agents' mean stochastic gradient.
    pub mean_stochastic_gradient: DVector<f64>,
}

/// A topology with the matrices the rounds and diagnostics need.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub spectral: SpectralData,
    /// Doubly stochastic mixing matrix for the gossip baselines.
    pub mixing: DMatrix<f64>,
    /// `K_n P`.
    pub centered_p: DMatrix<f64>,
}

impl Network {
    /// Uses Metropolis–Hastings weights for mixing.
    pub fn new(topology: &Topology) -> Result<Self, OptimizerError> {
        Self::with_mixing(topology, topology.metropolis_weights())
    }

    pub fn with_mixing(topology: &Topology, mixing: DMatrix<f64>) -> Result<Self, OptimizerError> {
        check_mixing(&mixing)?;
        let n = topology.n();
        if mixing.shape() != (n, n) {
            return Err(OptimizerError::BadMixingMatrix(format!(
                "shape {:?} for {n} agents",
                mixing.shape()
            )));
        }
        let adjacency = topology.weight_matrix();
        for i in 0..n {
            for j in 0..n {
                if i != j && adjacency[(i, j)] == 0.0 && mixing[(i, j)] != 0.0 {
                    return Err(OptimizerError::BadMixingMatrix(format!(
                        "weight on non-edge ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let spectral = spectral(topology)?;
        let centered_p = crate::topology::centering(n) * &spectral.projector_p;
        Ok(Self {
            topology: topology.clone(),
            spectral,
            mixing,
            centered_p,
        })
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.spectral.laplacian
    }
}

/// Rows and columns of a mixing matrix must sum to one within 1e-10.
pub fn check_mixing(m: &DMatrix<f64>) -> Result<(), OptimizerError> {
    if m.nrows() != m.ncols() {
        return Err(OptimizerError::BadMixingMatrix("not square".into()));
    }
    for i in 0..m.nrows() {
        let r = m.row(i).sum();
        let c = m.column(i).sum();
        if (r - 1.0).abs() > 1e-10 || (c - 1.0).abs() > 1e-10 {
            return Err(OptimizerError::BadMixingMatrix(format!(
                "row/column {} sums to {r}/{c}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Which method a run executes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    /// Decentralized SGD with uncompressed exchange.
    Dsgd { step: f64 },
    /// Compressed gossip SGD with estimate tracking.
    ChocoSgd {
        compressor: CompressorKind,
        gamma: f64,
        step: f64,
    },
    /// Compressed primal–dual SGD.
    CpSgd {
        compressor: CompressorKind,
        schedule: Schedule,
    },
}

impl Algorithm {
    pub fn compressor(&self) -> CompressorKind {
        match self {
            Algorithm::Dsgd { .. } => CompressorKind::Identity,
            Algorithm::ChocoSgd { compressor, .. } | Algorithm::CpSgd { compressor, .. } => {
                *compressor
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dsgd { .. } => "dsgd",
            Algorithm::ChocoSgd { .. } => "choco_sgd",
            Algorithm::CpSgd { .. } => "cp_sgd",
        }
    }
}
