use nalgebra::DMatrix;

use super::{
    choco_sgd_round, cp_sgd_round, dsgd_round, Algorithm, InitSpec, Network, OptimizerError,
    RoundParams, SwarmState,
};
use crate::compression::CompressorSpec;
use crate::diagnostics::{
    lyapunov_components, residual_update, DiagnosticsError, RunMetadata, Trace, TraceRow,
};
use crate::problems::{NoiseSpec, NoisyOracle, Problem, Reference};
use crate::rng::{label_salt, Streams};
use crate::topology::consensus_error;

/// Everything one run needs.
///
/// The starting point comes from `Streams::new(seed)` and is therefore
/// shared by all algorithms run with the same seed; gradient noise and
/// compression draws come from a stream forked by `label`.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub label: String,
    pub algorithm: Algorithm,
    pub problem: &'a Problem,
    pub network: &'a Network,
    pub noise: NoiseSpec,
    pub rounds: u64,
    pub seed: u64,
    pub init: InitSpec,
    /// Overrides `init` when set.
    pub x0: Option<DMatrix<f64>>,
    pub reference: Option<&'a Reference>,
    pub lyapunov: bool,
}

impl<'a> RunSpec<'a> {
    pub fn new(
        label: &str,
        algorithm: Algorithm,
        problem: &'a Problem,
        network: &'a Network,
    ) -> Self {
        Self {
            label: label.to_string(),
            algorithm,
            problem,
            network,
            noise: NoiseSpec::none(),
            rounds: 1,
            seed: 0,
            init: InitSpec::default(),
            x0: None,
            reference: None,
            lyapunov: false,
        }
    }

    pub fn streams(&self) -> Streams {
        Streams::new(self.seed).fork(label_salt(&self.label))
    }
}

fn nan_params() -> RoundParams {
    RoundParams {
        eta: f64::NAN,
        gamma: f64::NAN,
        omega: f64::NAN,
        alpha_x: f64::NAN,
    }
}

fn params_at(algorithm: &Algorithm, k: u64) -> Option<RoundParams> {
    match algorithm {
        Algorithm::Dsgd { step } => Some(RoundParams {
            eta: *step,
            ..nan_params()
        }),
        Algorithm::ChocoSgd { gamma, step, .. } => Some(RoundParams {
            eta: *step,
            gamma: *gamma,
            ..nan_params()
        }),
        Algorithm::CpSgd { schedule, .. } => schedule.eval(k).ok(),
    }
}

/// Runs `spec.rounds` rounds and records `rounds + 1` trace rows.
pub fn run(spec: &RunSpec) -> Result<Trace, OptimizerError> {
    if spec.rounds == 0 {
        return Err(OptimizerError::NoRounds);
    }
    let problem = spec.problem;
    let (n, d) = (problem.n(), problem.d());
    if spec.network.n() != n {
        return Err(OptimizerError::DimensionMismatch(format!(
            "graph has {} agents, problem {n}",
            spec.network.n()
        )));
    }
    spec.noise.validate()?;
    let compressor = CompressorSpec::from_kind(spec.algorithm.compressor(), d)?;
    if let Algorithm::CpSgd { schedule, .. } = &spec.algorithm {
        schedule.validate(compressor.r)?;
        if let Some(h) = schedule.horizon() {
            if h < spec.rounds {
                return Err(OptimizerError::ScheduleExhausted {
                    round: h,
                    horizon: h,
                });
            }
        }
    }
    let lyapunov = spec.lyapunov && matches!(spec.algorithm, Algorithm::CpSgd { .. });
    if lyapunov && spec.reference.is_none() {
        return Err(DiagnosticsError::MissingFStar.into());
    }

    let x0 = match &spec.x0 {
        Some(x) if x.shape() != (n, d) => {
            return Err(OptimizerError::DimensionMismatch(format!(
                "x0 is {:?}, expected ({n}, {d})",
                x.shape()
            )))
        }
        Some(x) => x.clone(),
        None => spec.init.sample(n, d, &Streams::new(spec.seed)),
    };
    let streams = spec.streams();
    let oracle = NoisyOracle::new(problem, spec.noise, streams);
    let x_star = spec.reference.map(|r| r.x());
    let f_star = spec.reference.map(|r| r.f_star);

    let mut state = SwarmState::new(x0);
    let mut rows = Vec::with_capacity(spec.rounds as usize + 1);
    let mut residual = None;
    let mut bits: u64 = 0;
    let mut last_params = None;
    for k in 0..=spec.rounds {
        let mean = state.mean_x();
        residual = x_star
            .as_ref()
            .map(|xs| residual_update(residual, &state.x, xs));
        let params = params_at(&spec.algorithm, k).or(last_params);
        let lyap = match (lyapunov, params) {
            (true, Some(p)) => Some(lyapunov_components(
                &state,
                problem,
                spec.network,
                &p,
                f_star,
            )?),
            _ => None,
        };
        rows.push(TraceRow {
            k,
            consensus_error: consensus_error(&state.x),
            residual: residual.unwrap_or(f64::NAN),
            grad_norm_sq: problem.gradient(&mean).norm_squared(),
            f_gap: f_star.map_or(f64::NAN, |fs| problem.value(&mean) - fs),
            bits_cumulative: bits,
            lyapunov: lyap,
            params: if k < spec.rounds { params } else { None },
        });
        if k == spec.rounds {
            break;
        }
        last_params = params;

        let (next, stats) = match &spec.algorithm {
            Algorithm::Dsgd { step } => {
                dsgd_round(&state, spec.network, &spec.network.mixing, &oracle, *step)?
            }
            Algorithm::ChocoSgd { gamma, step, .. } => choco_sgd_round(
                &state,
                spec.network,
                &compressor,
                &oracle,
                *gamma,
                *step,
                &streams,
            )?,
            Algorithm::CpSgd { schedule, .. } => cp_sgd_round(
                &state,
                spec.network,
                &compressor,
                &oracle,
                schedule,
                &streams,
            )?,
        };
        next.check_finite()?;
        state = next;
        bits += stats.bits_sent_total;
    }

    let schedule = match &spec.algorithm {
        Algorithm::CpSgd { schedule, .. } => serde_json::to_value(schedule).ok(),
        _ => None,
    };
    let meta = RunMetadata {
        seed: spec.seed,
        label: spec.label.clone(),
        algorithm: serde_json::to_value(&spec.algorithm).unwrap_or(serde_json::Value::Null),
        compressor: compressor.label(),
        compressor_r: compressor.r,
        compressor_phi: compressor.phi,
        schedule,
        problem_fingerprint: problem.fingerprint(),
        n,
        d,
        rounds: spec.rounds,
        noise_variance: spec.noise.variance,
        noise_bias: spec.noise.bias,
        f_star,
        x_star: spec.reference.map(|r| r.x_star.clone()),
        lyapunov,
    };
    Ok(Trace { rows, meta })
}
