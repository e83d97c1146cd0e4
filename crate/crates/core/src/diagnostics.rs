//! Per-round metrics and Lyapunov components, and their CSV / JSON output.
//!
//! CSV columns, in order:
//!
//! ```text
//! k,consensus_error,residual,grad_norm_sq,f_gap,bits_cumulative,v1,v2,v3,v4,v5,u,eta,gamma,omega
//! ```
//!
//! Row `k` describes the state before round `k` (row `T` is the final state);
//! `bits_cumulative` counts bits sent in rounds `0..k`; `eta,gamma,omega`
//! are the parameters applied in round `k`. Unavailable values are written
//! as `NaN`.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizers::{Network, RoundParams, SwarmState};
use crate::problems::Problem;

pub const CSV_HEADER: [&str; 15] = [
    "k",
    "consensus_error",
    "residual",
    "grad_norm_sq",
    "f_gap",
    "bits_cumulative",
    "v1",
    "v2",
    "v3",
    "v4",
    "v5",
    "u",
    "eta",
    "gamma",
    "omega",
];

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("optimal value f* is required for Lyapunov components")]
    MissingFStar,
    #[error("omega must be positive for Lyapunov components, got {0}")]
    NonPositiveOmega(f64),
    #[error("trace output: {0}")]
    Io(String),
}

impl From<io::Error> for DiagnosticsError {
    fn from(e: io::Error) -> Self {
        DiagnosticsError::Io(e.to_string())
    }
}

/// Energy terms of the convergence analysis at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lyapunov {
    /// `½‖x‖²_K`
    pub v1: f64,
    /// `½(1+β₁)‖v + g^b/ω‖²_P`
    pub v2: f64,
    /// `xᵀ K P (v + g^b/ω)`
    pub v3: f64,
    /// `n (f(x̄) − f*)`
    pub v4: f64,
    /// `‖x − x^c‖²`
    pub v5: f64,
    /// `‖x‖²_K + ‖v + g^b/ω‖²_P + ‖x − x^c‖² + n(f(x̄) − f*)`
    pub u: f64,
}

impl Lyapunov {
    pub fn total(&self) -> f64 {
        self.v1 + self.v2 + self.v3 + self.v4 + self.v5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub consensus_error: f64,
    pub residual: f64,
    pub grad_norm_sq: f64,
    pub f_gap: f64,
    pub bits_cumulative: u64,
    pub lyapunov: Option<Lyapunov>,
    pub params: Option<RoundParams>,
}

/// Provenance written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub label: String,
    pub algorithm: serde_json::Value,
    pub compressor: String,
    pub compressor_r: f64,
    pub compressor_phi: f64,
    pub schedule: Option<serde_json::Value>,
    pub problem_fingerprint: String,
    pub n: usize,
    pub d: usize,
    pub rounds: u64,
    pub noise_variance: f64,
    pub noise_bias: f64,
    pub f_star: Option<f64>,
    pub x_star: Option<Vec<f64>>,
    pub lyapunov: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub meta: RunMetadata,
}

/// `min(prev, ‖x − 1⊗x*‖²)`; the first call (no `prev`) returns the distance.
pub fn residual_update(prev: Option<f64>, x_stack: &DMatrix<f64>, x_star: &DVector<f64>) -> f64 {
    let dist: f64 = x_stack
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(x_star.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    match prev {
        Some(r) => r.min(dist),
        None => dist,
    }
}

/// `Σᵢⱼ Mᵢⱼ ⟨aᵢ, bⱼ⟩` for row stacks `a`, `b`.
fn bilinear(m: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a.transpose() * m * b).trace()
}

/// The five Lyapunov components and `U` at `state`.
pub fn lyapunov_components(
    state: &SwarmState,
    problem: &Problem,
    network: &Network,
    params: &RoundParams,
    f_star: Option<f64>,
) -> Result<Lyapunov, DiagnosticsError> {
    let f_star = f_star.ok_or(DiagnosticsError::MissingFStar)?;
    if !(params.omega > 0.0) {
        return Err(DiagnosticsError::NonPositiveOmega(params.omega));
    }
    let (n, d) = state.x.shape();
    let mean = state.mean_x();

    let mut w = state.v.clone();
    for i in 0..n {
        let gb = problem.local_gradient(i, &mean);
        for s in 0..d {
            w[(i, s)] += gb[s] / params.omega;
        }
    }

    let k_norm: f64 = state
        .x
        .row_iter()
        .map(|r| (r - mean.transpose()).norm_squared())
        .sum();
    let p_norm = bilinear(&network.spectral.projector_p, &w, &w);
    let cross = bilinear(&network.centered_p, &state.x, &w);
    let gap = n as f64 * (problem.value(&mean) - f_star);
    let compression = (&state.x - &state.xc).norm_squared();

    Ok(Lyapunov {
        v1: 0.5 * k_norm,
        v2: 0.5 * (1.0 + params.beta1()) * p_norm,
        v3: cross,
        v4: gap,
        v5: compression,
        u: k_norm + p_norm + compression + gap,
    })
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:e}")
    }
}

impl TraceRow {
    fn record(&self) -> Vec<String> {
        let lyap = self
            .lyapunov
            .map_or([f64::NAN; 6], |l| [l.v1, l.v2, l.v3, l.v4, l.v5, l.u]);
        let params = self
            .params
            .map_or([f64::NAN; 3], |p| [p.eta, p.gamma, p.omega]);
        let mut out = vec![
            self.k.to_string(),
            fmt(self.consensus_error),
            fmt(self.residual),
            fmt(self.grad_norm_sq),
            fmt(self.f_gap),
            self.bits_cumulative.to_string(),
        ];
        out.extend(lyap.iter().chain(params.iter()).map(|&x| fmt(x)));
        out
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DiagnosticsError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| DiagnosticsError::Io(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Trace {
    pub fn csv_bytes(&self) -> Result<Vec<u8>, DiagnosticsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io_err = |e: csv::Error| DiagnosticsError::Io(e.to_string());
        w.write_record(CSV_HEADER).map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.record()).map_err(io_err)?;
        }
        w.into_inner()
            .map_err(|e| DiagnosticsError::Io(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagnosticsError> {
        write_atomic(path, &self.csv_bytes()?)
    }

    pub fn write_metadata(&self, path: &Path) -> Result<(), DiagnosticsError> {
        let json = serde_json::to_vec_pretty(&self.meta)
            .map_err(|e| DiagnosticsError::Io(e.to_string()))?;
        write_atomic(path, &json)
    }

    pub fn last(&self) -> &TraceRow {
        self.rows
            .last()
            .expect("a trace has at least the initial row")
    }

    /// `(1/T) Σ_{k<T} ‖∇f(x̄_k)‖²` over the rows before each round.
    pub fn mean_grad_norm_sq(&self) -> f64 {
        let rounds = &self.rows[..self.rows.len().saturating_sub(1).max(1)];
        rounds.iter().map(|r| r.grad_norm_sq).sum::<f64>() / rounds.len() as f64
    }
}
