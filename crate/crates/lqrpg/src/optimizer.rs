//! Training loops: decaying-step SGD with the single-evaluation estimator,
//! the constant-step mini-batch variant, the noisy-dynamics mode, and an
//! exact-gradient baseline — all with stopping-time instrumentation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bounds::{ScheduleMode, SchedulePlan};
use crate::error::{LqrError, Result};
use crate::estimators::{
    minibatch_estimate, minibatch_estimate_dyn, EstimatorConfig, GradientEstimate,
};
use crate::lqr::{spectral_radius, LqrSystem, Policy};
use crate::rollout::RolloutConfig;
use crate::sampling::{NoiseSpec, RngStream};

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    /// Optimality gap `C(K_t) - C(K*)`, computed analytically.
    pub gap: f64,
    /// Frobenius norm of the gradient estimate used at this iteration.
    pub est_norm: f64,
    pub step: f64,
    /// Spectral radius of the updated closed loop.
    pub rho: f64,
    pub cum_oracle_calls: usize,
    /// Set at the first iteration where the gap exceeds `10 C(K0)`.
    pub tau1_triggered: bool,
    /// Set at the first iteration where the estimate norm exceeds the
    /// plan's high-probability threshold.
    pub tau2_triggered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    DivergedTau1,
    EstimateBlowupTau2,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_k: Policy,
    pub records: Vec<RunRecord>,
    pub status: TrainStatus,
}

impl TrainOutcome {
    pub fn final_gap(&self) -> f64 {
        self.records.last().map(|r| r.gap).unwrap_or(f64::NAN)
    }

    pub fn cum_oracle_calls(&self) -> usize {
        self.records.last().map(|r| r.cum_oracle_calls).unwrap_or(0)
    }

    /// Per-run CSV: `iter,gap,est_norm,step,rho,cum_calls,tau1,tau2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,gap,est_norm,step,rho,cum_calls,tau1,tau2\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iteration,
                r.gap,
                r.est_norm,
                r.step,
                r.rho,
                r.cum_oracle_calls,
                r.tau1_triggered as u8,
                r.tau2_triggered as u8
            )
            .expect("string write cannot fail");
        }
        out
    }

    /// JSON run summary.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            status: TrainStatus,
            iterations: usize,
            final_gap: f64,
            cum_oracle_calls: usize,
        }
        serde_json::to_string_pretty(&Summary {
            status: self.status,
            iterations: self.records.len(),
            final_gap: self.final_gap(),
            cum_oracle_calls: self.cum_oracle_calls(),
        })
        .expect("summary serialization cannot fail")
    }
}

/// Analytic ground-truth ledger for a training run: the optimal cost on the
/// relevant scale and the divergence threshold `10 C(K0)`.
struct GapLedger {
    cstar: f64,
    tau1_threshold: f64,
    /// Multiplier taking `tr(P_K)` to the cost scale of this run.
    cost_scale: f64,
}

impl GapLedger {
    fn for_init(system: &LqrSystem, k0: &Policy) -> Result<Self> {
        let p = system.solve_dare(crate::lqr::DEFAULT_DARE_TOL, crate::lqr::DEFAULT_DARE_MAX_ITER)?;
        let kstar = system.optimal_gain(&p)?;
        let cstar = system.population_cost(&kstar)?;
        let c0 = system.population_cost(k0)?;
        Ok(Self {
            cstar,
            tau1_threshold: 10.0 * c0,
            cost_scale: 1.0,
        })
    }

    fn for_dyn(system: &LqrSystem, k0: &Policy, noise_scale: f64) -> Result<Self> {
        let base = Self::for_init(system, k0)?;
        let scale = noise_scale * system.gamma() / (1.0 - system.gamma());
        Ok(Self {
            cstar: base.cstar * scale,
            tau1_threshold: base.tau1_threshold * scale,
            cost_scale: scale,
        })
    }

    fn gap(&self, system: &LqrSystem, k: &Policy) -> f64 {
        match system.population_cost(k) {
            Ok(c) => self.cost_scale * c - self.cstar,
            Err(_) => f64::INFINITY,
        }
    }
}

/// Generic instrumented loop `K_{t+1} = K_t - alpha_t G_t`. Estimator
/// failures are recorded as divergence, not surfaced as errors.
pub fn train_with<F>(
    system: &LqrSystem,
    k0: &Policy,
    plan: &SchedulePlan,
    ledger_noise_scale: Option<f64>,
    stream: RngStream,
    max_oracle_calls: Option<usize>,
    mut estimator: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&Policy, usize, RngStream) -> Result<GradientEstimate>,
{
    let ledger = match ledger_noise_scale {
        None => GapLedger::for_init(system, k0)?,
        Some(scale) => GapLedger::for_dyn(system, k0, scale)?,
    };
    let mut k = k0.clone();
    let mut records = Vec::with_capacity(plan.t);
    let mut cum_calls = 0usize;
    let mut status = TrainStatus::Completed;

    for t in 0..plan.t {
        let iter_stream = RngStream::derive(stream.seed, stream.stream_id, t as u64, 0);
        let alpha = plan.alpha(t);
        let (est_norm, calls, next) = match estimator(&k, t, iter_stream) {
            Ok(est) => {
                let next = Policy::new(k.k() - alpha * &est.g);
                (est.norm(), est.oracle_calls, next)
            }
            Err(_) => (f64::INFINITY, 0, Ok(k.clone())),
        };
        cum_calls += calls;
        let tau2 = est_norm > plan.grad_norm_threshold;
        let k_next = match next {
            Ok(p) => p,
            Err(_) => k.clone(),
        };
        let gap = ledger.gap(system, &k_next);
        let rho = spectral_radius(&system.closed_loop(&k_next));
        let tau1 = gap > ledger.tau1_threshold;
        records.push(RunRecord {
            iteration: t,
            gap,
            est_norm,
            step: alpha,
            rho,
            cum_oracle_calls: cum_calls,
            tau1_triggered: tau1,
            tau2_triggered: tau2,
        });
        k = k_next;
        if tau2 {
            status = TrainStatus::EstimateBlowupTau2;
            break;
        }
        if tau1 {
            status = TrainStatus::DivergedTau1;
            break;
        }
        if let Some(budget) = max_oracle_calls {
            if cum_calls >= budget && t + 1 < plan.t {
                status = TrainStatus::BudgetExhausted;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        final_k: k,
        records,
        status,
    })
}

/// Stochastic policy gradient in the random-initialization setting; the
/// batch size comes from the plan (1 reproduces the single-evaluation
/// algorithm).
pub fn train_sgd(
    system: &LqrSystem,
    k0: &Policy,
    plan: &SchedulePlan,
    est_cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    stream: RngStream,
    max_oracle_calls: Option<usize>,
) -> Result<TrainOutcome> {
    let cfg = EstimatorConfig {
        batch_size: plan.batch_size.max(1),
        ..est_cfg.clone()
    };
    train_with(
        system,
        k0,
        plan,
        None,
        stream,
        max_oracle_calls,
        |k, _t, s| minibatch_estimate(system, k, &cfg, rollout_cfg, init, s),
    )
}

/// Constant-step mini-batch training; requires a constant-step plan.
pub fn train_minibatch(
    system: &LqrSystem,
    k0: &Policy,
    plan: &SchedulePlan,
    est_cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    stream: RngStream,
    max_oracle_calls: Option<usize>,
) -> Result<TrainOutcome> {
    if plan.mode != ScheduleMode::MinibatchConstant {
        return Err(LqrError::ConfigError(
            "train_minibatch requires a constant-step plan".into(),
        ));
    }
    train_sgd(system, k0, plan, est_cfg, rollout_cfg, init, stream, max_oracle_calls)
}

/// Noisy-dynamics training (`x0 = 0`); the gap ledger lives on the
/// noise-driven cost scale.
pub fn train_noisy(
    system: &LqrSystem,
    k0: &Policy,
    plan: &SchedulePlan,
    est_cfg: &EstimatorConfig,
    noise: &NoiseSpec,
    rollout_cfg: &RolloutConfig,
    stream: RngStream,
    max_oracle_calls: Option<usize>,
) -> Result<TrainOutcome> {
    noise.validate()?;
    let cfg = EstimatorConfig {
        batch_size: plan.batch_size.max(1),
        ..est_cfg.clone()
    };
    train_with(
        system,
        k0,
        plan,
        Some(noise.scale),
        stream,
        max_oracle_calls,
        |k, _t, s| minibatch_estimate_dyn(system, k, &cfg, rollout_cfg, noise, s),
    )
}

/// Deterministic model-based baseline: gradient descent on the analytic
/// cost with Armijo backtracking, so the cost is strictly nonincreasing.
pub fn exact_gradient_descent(
    system: &LqrSystem,
    k0: &Policy,
    step: f64,
    iters: usize,
) -> Result<TrainOutcome> {
    let ledger = GapLedger::for_init(system, k0)?;
    let mut k = k0.clone();
    let mut cost = system.population_cost(&k)?;
    let mut records = Vec::with_capacity(iters);
    for t in 0..iters {
        let grad = system.analytic_gradient(&k)?;
        let gnorm_sq = grad.norm_squared();
        let mut alpha = step;
        let accepted = loop {
            let cand = Policy::new(k.k() - alpha * &grad)?;
            if system.is_discounted_stable(&cand) {
                if let Ok(c) = system.population_cost(&cand) {
                    // Armijo sufficient-decrease condition
                    if c <= cost - 1e-4 * alpha * gnorm_sq {
                        break Some((cand, c));
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-16 {
                break None;
            }
        };
        let (next, next_cost) = match accepted {
            Some(v) => v,
            None => {
                if gnorm_sq <= 1e-24 {
                    // already stationary; stop cleanly
                    break;
                }
                return Err(LqrError::StepTooLarge { step: alpha });
            }
        };
        records.push(RunRecord {
            iteration: t,
            gap: next_cost - ledger.cstar,
            est_norm: gnorm_sq.sqrt(),
            step: alpha,
            rho: spectral_radius(&system.closed_loop(&next)),
            cum_oracle_calls: 0,
            tau1_triggered: false,
            tau2_triggered: false,
        });
        k = next;
        cost = next_cost;
    }
    Ok(TrainOutcome {
        final_k: k,
        records,
        status: TrainStatus::Completed,
    })
}
