//! Compressed primal–dual stochastic gradient descent over undirected graphs.
//!
//! A desk-scale simulator for distributed nonconvex optimization where each
//! agent only exchanges compressed information with its neighbors. The crate
//! provides:
//!
//! - [`topology`]: connected undirected graphs, Laplacians, spectral data
//! - [`compression`]: Top-k, dithered b-bits and identity compressors with
//!   bit-exact wire accounting
//! - [`problems`]: local cost ensembles (nonconvex logistic classification,
//!   strongly convex quadratics) with exact and noisy gradient oracles
//! - [`optimizers`]: the compressed primal–dual round, DSGD and Choco-SGD
//!   baselines, parameter schedules and the round driver
//! - [`diagnostics`]: residuals, consensus error and Lyapunov components
//! - [`harness`]: JSON experiment configs, trace persistence and sweeps

pub mod compression;
pub mod diagnostics;
pub mod harness;
pub mod optimizers;
pub mod problems;
pub mod rng;
pub mod topology;

pub use compression::{CompressedMessage, CompressorKind, CompressorSpec};
pub use diagnostics::{Trace, TraceRow};
pub use optimizers::{Algorithm, Schedule, SwarmState};
pub use problems::{NoisyOracle, Problem};
pub use topology::{SpectralData, Topology};
