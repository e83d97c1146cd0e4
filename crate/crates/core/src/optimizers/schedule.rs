//! Step-size and penalty schedules `(η_k, γ_k, ω_k, α_x)`.

use serde::{Deserialize, Serialize};

use super::OptimizerError;

/// Parameters in force for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    pub eta: f64,
    pub gamma: f64,
    pub omega: f64,
    pub alpha_x: f64,
}

impl RoundParams {
    /// `β₁ = γ / ω`.
    pub fn beta1(&self) -> f64 {
        self.gamma / self.omega
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Fixed values every round.
    Constant {
        eta: f64,
        gamma: f64,
        omega: f64,
        alpha_x: f64,
    },
    /// `γ = β₁ω`, `η = β₂/ω`, constant `ω`.
    Theorem1 {
        beta1: f64,
        beta2: f64,
        omega: f64,
        alpha_x: f64,
    },
    /// Horizon-tuned `ω = β₂√T/√n`, then `η = β₂/ω`, `γ = β₁ω`. Valid for
    /// rounds `0..T`.
    Corollary1 {
        beta1: f64,
        beta2: f64,
        rounds: u64,
        n: usize,
        alpha_x: f64,
    },
    /// `γ_k = γ_s (k+1)`, `ω_k = ω_s (k+1)`, `η_k = η_s / (k+1)`.
    TimeVarying {
        gamma_scale: f64,
        omega_scale: f64,
        eta_scale: f64,
        alpha_x: f64,
    },
}

fn positive(name: &str, x: f64) -> Result<(), OptimizerError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(OptimizerError::InvalidSchedule(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl Schedule {
    /// Time-varying rules 45(k+1), 5(k+1), 10⁻⁴/(k+1).
    pub fn standard_time_varying(alpha_x: f64) -> Self {
        Schedule::TimeVarying {
            gamma_scale: 45.0,
            omega_scale: 5.0,
            eta_scale: 1e-4,
            alpha_x,
        }
    }

    pub fn alpha_x(&self) -> f64 {
        match *self {
            Schedule::Constant { alpha_x, .. }
            | Schedule::Theorem1 { alpha_x, .. }
            | Schedule::Corollary1 { alpha_x, .. }
            | Schedule::TimeVarying { alpha_x, .. } => alpha_x,
        }
    }

    /// Checks positivity and `α_x ∈ (0, 1/r)` for a compressor with scaling `r`.
    pub fn validate(&self, r: f64) -> Result<(), OptimizerError> {
        match *self {
            Schedule::Constant {
                eta, gamma, omega, ..
            } => {
                positive("eta", eta)?;
                positive("gamma", gamma)?;
                positive("omega", omega)?;
            }
            Schedule::Theorem1 {
                beta1,
                beta2,
                omega,
                ..
            } => {
                positive("beta1", beta1)?;
                positive("beta2", beta2)?;
                positive("omega", omega)?;
            }
            Schedule::Corollary1 {
                beta1,
                beta2,
                rounds,
                n,
                ..
            } => {
                positive("beta1", beta1)?;
                positive("beta2", beta2)?;
                if rounds == 0 || n == 0 {
                    return Err(OptimizerError::InvalidSchedule(
                        "rounds and n must be positive".into(),
                    ));
                }
            }
            Schedule::TimeVarying {
                gamma_scale,
                omega_scale,
                eta_scale,
                ..
            } => {
                positive("gamma_scale", gamma_scale)?;
                positive("omega_scale", omega_scale)?;
                positive("eta_scale", eta_scale)?;
            }
        }
        let a = self.alpha_x();
        if !(a > 0.0 && a < 1.0 / r) {
            return Err(OptimizerError::InvalidSchedule(format!(
                "alpha_x = {a} outside (0, 1/r) = (0, {})",
                1.0 / r
            )));
        }
        Ok(())
    }

    /// Parameters for round `k`.
    pub fn eval(&self, k: u64) -> Result<RoundParams, OptimizerError> {
        Ok(match *self {
            Schedule::Constant {
                eta,
                gamma,
                omega,
                alpha_x,
            } => RoundParams {
                eta,
                gamma,
                omega,
                alpha_x,
            },
            Schedule::Theorem1 {
                beta1,
                beta2,
                omega,
                alpha_x,
            } => RoundParams {
                eta: beta2 / omega,
                gamma: beta1 * omega,
                omega,
                alpha_x,
            },
            Schedule::Corollary1 {
                beta1,
                beta2,
                rounds,
                n,
                alpha_x,
            } => {
                if k >= rounds {
                    return Err(OptimizerError::ScheduleExhausted {
                        round: k,
                        horizon: rounds,
                    });
                }
                let omega = beta2 * (rounds as f64).sqrt() / (n as f64).sqrt();
                RoundParams {
                    eta: beta2 / omega,
                    gamma: beta1 * omega,
                    omega,
                    alpha_x,
                }
            }
            Schedule::TimeVarying {
                gamma_scale,
                omega_scale,
                eta_scale,
                alpha_x,
            } => {
                let t = (k + 1) as f64;
                RoundParams {
                    eta: eta_scale / t,
                    gamma: gamma_scale * t,
                    omega: omega_scale * t,
                    alpha_x,
                }
            }
        })
    }

    /// Finite horizon, if the schedule has one.
    pub fn horizon(&self) -> Option<u64> {
        match *self {
            Schedule::Corollary1 { rounds, .. } => Some(rounds),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_row() {
        let s = Schedule::Constant {
            eta: 0.05,
            gamma: 4.0,
            omega: 0.5,
            alpha_x: 0.2,
        };
        s.validate(1.0).unwrap();
        for k in [0, 1, 999] {
            assert_eq!(
                s.eval(k).unwrap(),
                RoundParams {
                    eta: 0.05,
                    gamma: 4.0,
                    omega: 0.5,
                    alpha_x: 0.2
                }
            );
        }
    }

    #[test]
    fn corollary_couplings() {
        let s = Schedule::Corollary1 {
            beta1: 2.0,
            beta2: 1.0,
            rounds: 100,
            n: 4,
            alpha_x: 0.5,
        };
        let p = s.eval(0).unwrap();
        assert_eq!(p.omega, 5.0);
        assert_eq!(p.eta, 0.2);
        assert_eq!(p.gamma, 10.0);
        assert_eq!(
            s.eval(100),
            Err(OptimizerError::ScheduleExhausted {
                round: 100,
                horizon: 100
            })
        );
    }

    #[test]
    fn theorem1_couplings() {
        let p = Schedule::Theorem1 {
            beta1: 3.0,
            beta2: 0.5,
            omega: 2.0,
            alpha_x: 0.5,
        }
        .eval(7)
        .unwrap();
        assert_eq!((p.gamma, p.eta, p.omega), (6.0, 0.25, 2.0));
        assert_eq!(p.beta1(), 3.0);
    }

    #[test]
    fn time_varying_shifted_start() {
        let s = Schedule::standard_time_varying(0.2);
        let p0 = s.eval(0).unwrap();
        assert_eq!(
            (p0.eta, p0.gamma, p0.omega, p0.alpha_x),
            (1e-4, 45.0, 5.0, 0.2)
        );
        let p9 = s.eval(9).unwrap();
        assert_eq!((p9.eta, p9.gamma, p9.omega), (1e-5, 450.0, 50.0));
        // ω_k non-decreasing
        let mut prev = 0.0;
        for k in 0..100 {
            let w = s.eval(k).unwrap().omega;
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn alpha_x_must_be_below_one_over_r() {
        let s = Schedule::Constant {
            eta: 0.05,
            gamma: 4.0,
            omega: 0.5,
            alpha_x: 1.5,
        };
        assert!(matches!(
            s.validate(1.0),
            Err(OptimizerError::InvalidSchedule(_))
        ));
        assert!(s.validate(0.5).is_ok());
        let neg = Schedule::Constant {
            eta: -0.05,
            gamma: 4.0,
            omega: 0.5,
            alpha_x: 0.2,
        };
        assert!(neg.validate(1.0).is_err());
    }
}
