use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::optimizers::{run, Algorithm, Network, RunSpec, Schedule};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub omega: f64,
    pub eta: f64,
    pub gamma: f64,
    /// `(1/T) Σ_{k<T} ‖∇f(x̄_k)‖²` averaged over seeds.
    pub mean_grad_norm_sq: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rounds: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

impl SweepSummary {
    pub fn column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_grad_norm_sq).collect()
    }
}

/// Runs CP-SGD with `ω = β₂√T/√n` on a ring-with-chords graph for each agent
/// count and reports the time-averaged squared gradient norm at the mean.
///
/// The problem comes from the config's problem section rebuilt with `n`
/// agents. `beta2` overrides the config's sweep section.
pub fn speedup_sweep(
    cfg: &ExperimentConfig,
    agents: &[usize],
    rounds: u64,
    beta2: Option<f64>,
) -> Result<SweepSummary, HarnessError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| HarnessError::Sweep("config has no `sweep` section".into()))?;
    if agents.is_empty() || agents.contains(&0) {
        return Err(HarnessError::Sweep("agent counts must be positive".into()));
    }
    if rounds == 0 {
        return Err(HarnessError::Sweep("rounds must be positive".into()));
    }
    let beta2 = beta2.unwrap_or(sweep.beta2);
    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(agents.len());
    for &n in agents {
        let topology =
            Topology::ring_with_chords(n).map_err(|e| HarnessError::Sweep(e.to_string()))?;
        let network = Network::new(&topology).map_err(|e| HarnessError::Sweep(e.to_string()))?;
        let schedule = Schedule::Corollary1 {
            beta1: sweep.beta1,
            beta2,
            rounds,
            n,
            alpha_x: sweep.alpha_x,
        };
        let params = schedule
            .eval(0)
            .map_err(|e| HarnessError::Sweep(e.to_string()))?;
        let algorithm = Algorithm::CpSgd {
            compressor: sweep.compressor,
            schedule,
        };
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let problem = cfg.problem.build(seed, Some(n))?;
            // The exact horizon threshold involves an uncomputed constant;
            // flag runs whose step η = √(n/T) exceeds 1/L̂ instead.
            if let Some(l) = problem.smoothness_hint() {
                if per_seed.is_empty() && params.eta * l > 1.0 {
                    warnings.push(format!(
                        "n = {n}: T = {rounds} may be below the horizon threshold (η·L̂ = {:.3} > 1)",
                        params.eta * l
                    ));
                }
            }
            let spec = RunSpec {
                noise: cfg.noise,
                rounds,
                seed,
                init: cfg.init,
                ..RunSpec::new(
                    &format!("sweep-n{n}"),
                    algorithm.clone(),
                    &problem,
                    &network,
                )
            };
            let trace = run(&spec)
                .map_err(|e| HarnessError::Sweep(format!("n = {n}, seed {seed}: {e}")))?;
            per_seed.push(trace.mean_grad_norm_sq());
        }
        rows.push(SweepRow {
            n,
            omega: params.omega,
            eta: params.eta,
            gamma: params.gamma,
            mean_grad_norm_sq: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            per_seed,
        });
    }
    Ok(SweepSummary {
        rounds,
        beta1: sweep.beta1,
        beta2,
        seeds: cfg.seeds.clone(),
        rows,
        warnings,
    })
}
