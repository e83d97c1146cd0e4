use nalgebra::{DMatrix, DVector};

use super::{check_mixing, Network, OptimizerError, RoundStats, Schedule, SwarmState};
use crate::compression::{CompressionError, CompressorSpec};
use crate::problems::NoisyOracle;
use crate::rng::{Domain, Streams};

/// `M · X` with each entry summed over `j` in ascending order.
pub(crate) fn mix(m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut out = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let w = m[(i, j)];
            if w != 0.0 {
                for s in 0..d {
                    out[(i, s)] += w * x[(j, s)];
                }
            }
        }
    }
    out
}

fn check_shapes(
    state: &SwarmState,
    network: &Network,
    oracle: &NoisyOracle,
    d: Option<usize>,
) -> Result<(), OptimizerError> {
    let (n, sd) = state.x.shape();
    if n != network.n() || n != oracle.problem.n() {
        return Err(OptimizerError::DimensionMismatch(format!(
            "state has {n} agents, graph {}, problem {}",
            network.n(),
            oracle.problem.n()
        )));
    }
    if sd != oracle.problem.d() || d.is_some_and(|d| d != sd) {
        return Err(OptimizerError::DimensionMismatch(format!(
            "state dimension {sd}, problem {}, compressor {:?}",
            oracle.problem.d(),
            d
        )));
    }
    if state.v.shape() != state.x.shape() || state.xc.shape() != state.x.shape() {
        return Err(OptimizerError::DimensionMismatch(
            "state stacks differ in shape".into(),
        ));
    }
    Ok(())
}

/// Stochastic gradients of every agent at its own iterate, stacked by row.
fn gradients(state: &SwarmState, oracle: &NoisyOracle) -> DMatrix<f64> {
    let (n, d) = state.x.shape();
    let mut g = DMatrix::zeros(n, d);
    for i in 0..n {
        let gi = oracle.stochastic_gradient(i, &SwarmState::row(&state.x, i), state.round);
        g.set_row(i, &gi.transpose());
    }
    g
}

fn mean_row(g: &DMatrix<f64>) -> DVector<f64> {
    let (n, d) = g.shape();
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for s in 0..d {
            mean[s] += g[(i, s)];
        }
    }
    mean / n as f64
}

/// Each agent compresses `x_j − ref_j` once and every receiver reconstructs
/// `x̂_j = ref_j + C(x_j − ref_j)`. A lossless compressor hands over `x_j`.
fn broadcast(
    x: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    compressor: &CompressorSpec,
    streams: &Streams,
    round: u64,
) -> Result<(DMatrix<f64>, u64), CompressionError> {
    let n = x.nrows();
    let mut xhat = DMatrix::zeros(n, x.ncols());
    let mut bits = 0;
    for j in 0..n {
        let xj = SwarmState::row(x, j);
        let rj = SwarmState::row(reference, j);
        let mut rng = streams.stream(Domain::Compression, j as u64, round);
        let msg = compressor.compress(&(&xj - &rj), &mut rng)?;
        bits += msg.bits;
        let est = if compressor.is_lossless() {
            xj
        } else {
            rj + msg.reconstructed
        };
        xhat.set_row(j, &est.transpose());
    }
    Ok((xhat, bits))
}

/// One round of compressed primal–dual SGD.
///
/// ```text
/// x̂_j   = x^c_j + C(x_j − x^c_j)
/// x_i'  = x_i − η (γ Σ_j L_ij x̂_j + ω v_i + g_i)
/// v_i'  = v_i + η ω Σ_j L_ij x̂_j
/// x^c_j' = (1 − α_x) x^c_j + α_x x̂_j
/// ```
pub fn cp_sgd_round(
    state: &SwarmState,
    network: &Network,
    compressor: &CompressorSpec,
    oracle: &NoisyOracle,
    schedule: &Schedule,
    streams: &Streams,
) -> Result<(SwarmState, RoundStats), OptimizerError> {
    check_shapes(state, network, oracle, Some(compressor.d))?;
    let p = schedule.eval(state.round)?;
    let (n, d) = state.x.shape();

    let (xhat, bits) = broadcast(&state.x, &state.xc, compressor, streams, state.round)?;
    let g = gradients(state, oracle);
    let lx = mix(network.laplacian(), &xhat);

    let mut next = state.clone();
    for i in 0..n {
        for s in 0..d {
            next.x[(i, s)] = state.x[(i, s)]
                - p.eta * (p.gamma * lx[(i, s)] + p.omega * state.v[(i, s)] + g[(i, s)]);
            next.v[(i, s)] = state.v[(i, s)] + p.eta * p.omega * lx[(i, s)];
            next.xc[(i, s)] = (1.0 - p.alpha_x) * state.xc[(i, s)] + p.alpha_x * xhat[(i, s)];
        }
    }
    next.round += 1;
    Ok((
        next,
        RoundStats {
            bits_sent_total: bits,
            grad_calls: n as u64,
            mean_stochastic_gradient: mean_row(&g),
        },
    ))
}

/// One round of DSGD: `x_i' = Σ_j W_ij x_j − η g_i`.
pub fn dsgd_round(
    state: &SwarmState,
    network: &Network,
    mixing: &DMatrix<f64>,
    oracle: &NoisyOracle,
    step: f64,
) -> Result<(SwarmState, RoundStats), OptimizerError> {
    check_shapes(state, network, oracle, None)?;
    check_mixing(mixing)?;
    if mixing.nrows() != state.n() {
        return Err(OptimizerError::BadMixingMatrix(
            "size differs from agent count".into(),
        ));
    }
    if !(step > 0.0) {
        return Err(OptimizerError::BadStep(format!("step = {step}")));
    }
    let (n, d) = state.x.shape();
    let g = gradients(state, oracle);
    let mixed = mix(mixing, &state.x);
    let mut next = state.clone();
    for i in 0..n {
        for s in 0..d {
            next.x[(i, s)] = mixed[(i, s)] - step * g[(i, s)];
        }
    }
    next.round += 1;
    Ok((
        next,
        RoundStats {
            bits_sent_total: n as u64 * 32 * d as u64,
            grad_calls: n as u64,
            mean_stochastic_gradient: mean_row(&g),
        },
    ))
}

/// One round of Choco-SGD with public estimates `x̂` kept in `state.xc`.
///
/// ```text
/// x_i^½  = x_i − η g_i
/// x̂_j'   = x̂_j + C(x_j^½ − x̂_j)
/// x_i'   = x_i^½ + γ Σ_j W_ij (x̂_j' − x̂_i')
/// ```
pub fn choco_sgd_round(
    state: &SwarmState,
    network: &Network,
    compressor: &CompressorSpec,
    oracle: &NoisyOracle,
    gamma: f64,
    step: f64,
    streams: &Streams,
) -> Result<(SwarmState, RoundStats), OptimizerError> {
    check_shapes(state, network, oracle, Some(compressor.d))?;
    if !(step > 0.0) || !(gamma >= 0.0) {
        return Err(OptimizerError::BadStep(format!(
            "step = {step}, gamma = {gamma}"
        )));
    }
    let (n, d) = state.x.shape();
    let g = gradients(state, oracle);
    let mut half = state.x.clone();
    for i in 0..n {
        for s in 0..d {
            half[(i, s)] = state.x[(i, s)] - step * g[(i, s)];
        }
    }
    let (xhat, bits) = broadcast(&half, &state.xc, compressor, streams, state.round)?;

    let w = &network.mixing;
    let mut next = state.clone();
    for i in 0..n {
        for s in 0..d {
            let mut pull = 0.0;
            for j in 0..n {
                if j != i && w[(i, j)] != 0.0 {
                    pull += w[(i, j)] * (xhat[(j, s)] - xhat[(i, s)]);
                }
            }
            next.x[(i, s)] = half[(i, s)] + gamma * pull;
        }
    }
    next.xc = xhat;
    next.round += 1;
    Ok((
        next,
        RoundStats {
            bits_sent_total: bits,
            grad_calls: n as u64,
            mean_stochastic_gradient: mean_row(&g),
        },
    ))
}
