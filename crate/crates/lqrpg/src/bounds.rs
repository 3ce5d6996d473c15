//! Computable theory-side constants and schedules: discount thresholds, the
//! spectral-radius cap, the estimator norm/moment constants (both settings),
//! the exponential-decay envelope, and the step-size / batch-size / horizon
//! calculators behind the convergence guarantees.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::lqr::{kreiss_constant, min_sym_eigenvalue, KreissGrid, LqrSystem, Policy};

/// Problem-regularity constants. The smoothness/PL-type constants are
/// inputs (measured or configured), not derived here; the companion
/// [`estimate_regularity`] utility produces non-certified empirical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityInputs {
    /// Bound on `max{||K||, ||grad C(K)||_F}` over the sublevel set.
    pub c_k1_tilde: f64,
    /// Smoothness constant (phi).
    pub phi: f64,
    /// Gradient Lipschitz constant (lambda).
    pub lambda: f64,
    /// Smoothness radius (omega).
    pub omega: f64,
    /// Gradient-dominance (PL) constant (mu).
    pub mu: f64,
    /// Initial cost `C(K0)`.
    pub c0: f64,
    /// Optimal cost `C(K*)`.
    pub cstar: f64,
    /// Undiscounted cost of `K0` (threshold quantity).
    pub cund0: f64,
    /// Almost-sure bound on the squared initial-state norm.
    pub c_m: f64,
    /// Surrogate for the sup of Kreiss constants over the sublevel set.
    pub kreiss_bar: f64,
}

impl RegularityInputs {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_k1_tilde", self.c_k1_tilde),
            ("phi", self.phi),
            ("lambda", self.lambda),
            ("omega", self.omega),
            ("mu", self.mu),
            ("c0", self.c0),
            ("cstar", self.cstar),
            ("cund0", self.cund0),
            ("c_m", self.c_m),
            ("kreiss_bar", self.kreiss_bar),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LqrError::ConfigError(format!(
                    "regularity input {name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.cstar > self.c0 {
            return Err(LqrError::ConfigError(
                "cstar must not exceed c0".into(),
            ));
        }
        Ok(())
    }
}

/// Which analysis setting a constant belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Random initial state.
    Init,
    /// Noisy dynamics (zero initial state).
    Dyn,
}

/// The gradient-estimate norm/moment constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiConstants {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
    pub variant: Variant,
    pub sigma: f64,
    pub m: usize,
}

/// `xi3 = (1/sigma) xi1 sqrt(5) sqrt(m) + sigma xi2 5^{3/2} m^{3/2}`.
pub fn combine_xi3(xi1: f64, xi2: f64, sigma: f64, m: usize) -> f64 {
    let m = m as f64;
    xi1 / sigma * 5.0_f64.sqrt() * m.sqrt() + sigma * xi2 * 5.0_f64.powf(1.5) * m.powf(1.5)
}

/// `xi4 = xi1^2 m / sigma^2 + 2 xi1 xi2 m(m+2) + sigma^2 xi2^2 m(m+2)(m+4)`.
pub fn combine_xi4(xi1: f64, xi2: f64, sigma: f64, m: usize) -> f64 {
    let m = m as f64;
    xi1 * xi1 * m / (sigma * sigma)
        + 2.0 * xi1 * xi2 * m * (m + 2.0)
        + sigma * sigma * xi2 * xi2 * m * (m + 2.0) * (m + 4.0)
}

impl XiConstants {
    /// High-probability norm threshold `xi3/(1-gamma) (log 1/delta)^{3/2}`,
    /// the quantity behind the estimate-blowup stopping time.
    pub fn norm_threshold(&self, gamma: f64, delta: f64) -> f64 {
        self.xi3 / (1.0 - gamma) * (1.0 / delta).ln().powf(1.5)
    }

    /// Second-moment bound `xi4/(1-gamma)^2`.
    pub fn second_moment_bound(&self, gamma: f64) -> f64 {
        self.xi4 / (1.0 - gamma).powi(2)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Lower discount threshold: `1 - sigma_min(Q)/(11 Cund0)` for the
/// random-initialization setting, `1 - 0.5 sigma_min(Q)/(11 Cund0)` for
/// noisy dynamics. The configured discount must exceed this for the
/// guarantees to apply.
pub fn gamma_threshold(q: &DMatrix<f64>, cund0: f64, variant: Variant) -> f64 {
    let s = min_sym_eigenvalue(q);
    let factor = match variant {
        Variant::Init => 1.0,
        Variant::Dyn => 0.5,
    };
    1.0 - factor * s / (11.0 * cund0)
}

/// Certified spectral-radius cap over the sublevel set:
/// `(1/sqrt(gamma)) sqrt(1 - sigma_min(Q)/(10 C0 + Cstar))`.
pub fn rho_bound(q: &DMatrix<f64>, c0: f64, cstar: f64, gamma: f64) -> f64 {
    let s = min_sym_eigenvalue(q);
    (1.0 / gamma.sqrt()) * (1.0 - s / (10.0 * c0 + cstar)).max(0.0).sqrt()
}

/// Uniform decay envelope over the sublevel set:
/// `M = sqrt((10 C0 + Cstar)/lambda_min(Q))`,
/// `r = sqrt(1 - 0.5 lambda_min(Q)/(10 C0 + Cstar - 0.5 lambda_min(Q)))`.
pub fn decay_envelope(q: &DMatrix<f64>, c0: f64, cstar: f64) -> (f64, f64) {
    let lam = min_sym_eigenvalue(q);
    let total = 10.0 * c0 + cstar;
    let m = (total / lam).sqrt();
    let r = (1.0 - 0.5 * lam / (total - 0.5 * lam)).sqrt();
    (m, r)
}

/// Sublevel-set membership `C(K) - C(K*) <= 10 C(K0)`, computed with the
/// analytic cost.
pub fn in_sublevel_set(system: &LqrSystem, policy: &Policy, c0: f64, cstar: f64) -> bool {
    match system.population_cost(policy) {
        Ok(c) => c - cstar <= 10.0 * c0,
        Err(_) => false,
    }
}

/// Heuristic surrogate for the sup of Kreiss constants over the sublevel
/// set: the Kreiss constant at `K0` times a safety factor (default 3).
pub fn kreiss_bar_surrogate(system: &LqrSystem, k0: &Policy, safety: f64) -> Result<f64> {
    let k = kreiss_constant(&system.closed_loop(k0), &KreissGrid::default())?;
    Ok(k * safety)
}

/// The estimate norm/moment constants for either setting.
pub fn xi_constants(
    system: &LqrSystem,
    reg: &RegularityInputs,
    sigma: f64,
    variant: Variant,
) -> Result<XiConstants> {
    reg.validate()?;
    if sigma <= 0.0 {
        return Err(LqrError::ConfigError("sigma must be > 0".into()));
    }
    let gamma = system.gamma();
    let (n, m) = (system.state_dim() as f64, system.input_dim());
    let q_norm = spectral_norm(system.q());
    let r_norm = spectral_norm(system.r());
    let b_norm = spectral_norm(system.b());
    let c1 = reg.c_k1_tilde;
    let total = 10.0 * reg.c0 + reg.cstar;

    let (xi1, xi2) = match variant {
        Variant::Init => {
            let e = std::f64::consts::E;
            let xi1 = (q_norm + 2.0 * r_norm * c1 * c1 + 2.0 * gamma * total)
                * e.powi(3)
                * n.powi(3)
                * reg.kreiss_bar.powi(3)
                * reg.c_m.powf(1.5);
            let xi2 = (2.0 * r_norm + 2.0 * gamma * b_norm * b_norm * total)
                * e
                * n
                * reg.kreiss_bar
                * reg.c_m.sqrt();
            (xi1, xi2)
        }
        Variant::Dyn => {
            let (big_m, r) = decay_envelope(system.q(), reg.c0, reg.cstar);
            let mixed = q_norm + r_norm * c1 * c1;
            let xi1 = big_m.powi(3) * reg.c_m.powf(1.5) / (1.0 - r).powi(3)
                * (q_norm
                    + 2.0 * r_norm * c1 * c1
                    + 2.0 * gamma * mixed * (big_m * big_m * r + 2.0).powi(2) / (1.0 - gamma));
            let xi2 = 2.0 * big_m * reg.c_m.sqrt() / (1.0 - r)
                * (r_norm + gamma * mixed * big_m * big_m * b_norm * b_norm / (1.0 - gamma));
            (xi1, xi2)
        }
    };
    Ok(XiConstants {
        xi1,
        xi2,
        xi3: combine_xi3(xi1, xi2, sigma, m),
        xi4: combine_xi4(xi1, xi2, sigma, m),
        variant,
        sigma,
        m,
    })
}

/// Step-size rule of a training plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `alpha_t = (2/mu)/(t + n)`.
    Decaying { mu: f64, n: usize },
    /// `alpha_t = max(1/(a t + b), floor)`.
    InverseLinearFloor { a: f64, b: f64, floor: f64 },
}

impl StepSchedule {
    pub fn alpha(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Decaying { mu, n } => 2.0 / mu / (t + n) as f64,
            StepSchedule::InverseLinearFloor { a, b, floor } => {
                (1.0 / (a * t as f64 + b)).max(floor)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    SgdDecaying,
    MinibatchConstant,
}

/// Fully resolved training-loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub mode: ScheduleMode,
    pub step: StepSchedule,
    pub n1: usize,
    pub n: usize,
    pub t: usize,
    pub delta: f64,
    pub delta_cap: f64,
    pub batch_size: usize,
    /// Estimate-norm threshold for the blowup stopping time.
    pub grad_norm_threshold: f64,
    /// Stated lower bound on the success probability.
    pub success_probability: f64,
}

impl SchedulePlan {
    pub fn alpha(&self, t: usize) -> f64 {
        self.step.alpha(t)
    }

    /// A hand-tuned plan (the benchmark default): explicit step rule, batch
    /// size, and iteration budget; no probability statement.
    pub fn tuned(step: StepSchedule, batch_size: usize, t: usize, grad_norm_threshold: f64) -> Self {
        Self {
            mode: match step {
                StepSchedule::Constant { .. } => ScheduleMode::MinibatchConstant,
                _ => ScheduleMode::SgdDecaying,
            },
            step,
            n1: 0,
            n: 0,
            t,
            delta: f64::NAN,
            delta_cap: f64::NAN,
            batch_size,
            grad_norm_threshold,
            success_probability: f64::NAN,
        }
    }
}

fn log_inv(delta: f64) -> f64 {
    (1.0 / delta).ln()
}

/// `N1 = max{2, (4 phi xi4 / (mu^2 (1-gamma)^2)) * 2/C0}`.
fn n1_value(reg: &RegularityInputs, xi: &XiConstants, gamma: f64) -> usize {
    let raw = 4.0 * reg.phi * xi.xi4 / (reg.mu * reg.mu * (1.0 - gamma).powi(2)) * 2.0 / reg.c0;
    (raw.ceil() as usize).max(2)
}

/// Largest admissible failure parameter for the decaying-step guarantee.
pub fn sgd_delta_cap(
    reg: &RegularityInputs,
    xi: &XiConstants,
    gamma: f64,
    epsilon: f64,
) -> f64 {
    let n1 = n1_value(reg, xi, gamma) as f64;
    let c1 = reg.c_k1_tilde;
    let e3 = epsilon.powi(3);
    let cap1 = (reg.phi * xi.xi4 * reg.omega / (960.0 * xi.xi3 * xi.xi3 * c1 * reg.c0)).powi(3) * e3;
    let cap2 = (reg.phi * xi.xi4
        / (480.0 * (1.0 - gamma) * reg.mu * xi.xi3 * c1 * n1 * reg.c0))
        .powi(3)
        * e3;
    let cap3 = (reg.mu * (1.0 - gamma) / (240.0 * xi.xi3 * c1)).powi(3) * e3;
    2e-5_f64.min(cap1).min(cap2).min(cap3)
}

/// Decaying-step plan: `alpha_t = (2/mu)/(t+N)` with
/// `N = max{N1, (2/mu) xi3 (log 1/delta)^{3/2} / ((1-gamma) omega)}` and
/// `T = (40/epsilon) N C0`; success probability `4/5 - delta T`.
pub fn schedule_sgd(
    reg: &RegularityInputs,
    xi: &XiConstants,
    gamma: f64,
    epsilon: f64,
    delta: f64,
) -> Result<SchedulePlan> {
    reg.validate()?;
    if !(epsilon > 0.0 && epsilon <= 20.0 * reg.c0) {
        return Err(LqrError::ConfigError(format!(
            "epsilon must lie in (0, 20 C0]; got {epsilon} with C0 = {}",
            reg.c0
        )));
    }
    let cap = sgd_delta_cap(reg, xi, gamma, epsilon);
    if delta > cap {
        return Err(LqrError::InfeasibleDelta {
            requested: delta,
            cap,
        });
    }
    let n1 = n1_value(reg, xi, gamma);
    let n_float = (2.0 / reg.mu) * xi.xi3 * log_inv(delta).powf(1.5) / ((1.0 - gamma) * reg.omega);
    let n = n1.max(n_float.ceil() as usize);
    let t = ((40.0 / epsilon) * n as f64 * reg.c0).ceil() as usize;
    Ok(SchedulePlan {
        mode: ScheduleMode::SgdDecaying,
        step: StepSchedule::Decaying { mu: reg.mu, n },
        n1,
        n,
        t: t.max(1),
        delta,
        delta_cap: cap,
        batch_size: 1,
        grad_norm_threshold: xi.norm_threshold(gamma, delta),
        success_probability: 0.8 - delta * t as f64,
    })
}

/// Largest admissible failure parameter for the mini-batch guarantee.
pub fn minibatch_delta_cap(reg: &RegularityInputs, xi: &XiConstants, gamma: f64, epsilon: f64) -> f64 {
    let cap2 = (1.0 - gamma) / (3.0 * xi.xi3) * (reg.mu * epsilon / 8.0).sqrt();
    (-1.5_f64).exp().min(cap2)
}

/// Constant-step mini-batch plan: step capped by the smoothness radius and
/// curvature, batch size from the concentration requirement, and
/// `T = (4/(alpha mu)) log(2 C0/epsilon)`; success probability `1 - delta T`.
pub fn schedule_minibatch(
    reg: &RegularityInputs,
    xi: &XiConstants,
    gamma: f64,
    epsilon: f64,
    delta: f64,
    m: usize,
    n: usize,
) -> Result<SchedulePlan> {
    reg.validate()?;
    if !(epsilon > 0.0 && epsilon <= reg.c0) {
        return Err(LqrError::ConfigError(format!(
            "epsilon must lie in (0, C0]; got {epsilon} with C0 = {}",
            reg.c0
        )));
    }
    let cap = minibatch_delta_cap(reg, xi, gamma, epsilon);
    if delta > cap {
        return Err(LqrError::InfeasibleDelta {
            requested: delta,
            cap,
        });
    }
    let alpha = (reg.omega / (reg.c_k1_tilde + (reg.mu * reg.c0 / 8.0).sqrt()))
        .min(1.0 / (4.0 * reg.phi))
        .min(4.0 / reg.mu);
    let mn1 = 2.0 * (m * n + 1) as f64;
    let log_term = (mn1 / delta).ln();
    let n_s = 5000.0_f64
        .max(8.0 * (2.0 / delta).ln().powi(3))
        .max(2048.0 * xi.xi3 * xi.xi3 / (9.0 * (1.0 - gamma).powi(2) * reg.mu)
            * (1.0 / epsilon)
            * log_term
            * log_term)
        .max(128.0 * xi.xi4 / (reg.mu * (1.0 - gamma).powi(2)) * (1.0 / epsilon) * log_term)
        .ceil() as usize;
    let t = ((4.0 / (alpha * reg.mu)) * (2.0 * reg.c0 / epsilon).ln()).ceil() as usize;
    Ok(SchedulePlan {
        mode: ScheduleMode::MinibatchConstant,
        step: StepSchedule::Constant { alpha },
        n1: 0,
        n: 0,
        t: t.max(1),
        delta,
        delta_cap: cap,
        batch_size: n_s,
        grad_norm_threshold: xi.norm_threshold(gamma, delta),
        success_probability: 1.0 - delta * t as f64,
    })
}

/// Empirical (non-certified) regularity estimation along an exact
/// gradient-descent trace from `k0`: `mu` from the gradient-dominance ratio
/// `||grad||^2 / gap`, `phi`/`lambda` from secant smoothness probes, and
/// `c_k1_tilde` from the largest gain/gradient norms observed.
pub fn estimate_regularity(
    system: &LqrSystem,
    k0: &Policy,
    steps: usize,
    c_m: f64,
) -> Result<RegularityInputs> {
    let p = system.solve_dare(crate::lqr::DEFAULT_DARE_TOL, crate::lqr::DEFAULT_DARE_MAX_ITER)?;
    let kstar = system.optimal_gain(&p)?;
    let cstar = system.population_cost(&kstar)?;
    let c0 = system.population_cost(k0)?;
    let cund0 = system.undiscounted_cost(k0).unwrap_or(f64::INFINITY);

    let mut k = k0.clone();
    let mut mu = f64::INFINITY;
    let mut phi: f64 = 0.0;
    let mut c1: f64 = 0.0;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    for _ in 0..steps {
        let grad = system.analytic_gradient(&k)?;
        let gap = system.population_cost(&k)? - cstar;
        c1 = c1.max(k.k().norm()).max(grad.norm());
        if gap > 1e-12 {
            mu = mu.min(grad.norm_squared() / gap);
        }
        if let Some((pk, pg)) = &prev {
            let dk = (k.k() - pk).norm();
            if dk > 1e-12 {
                phi = phi.max((&grad - pg).norm() / dk);
            }
        }
        prev = Some((k.k().clone(), grad.clone()));
        // conservative descent step sized off the local smoothness guess
        let step = 1.0 / (2.0 * phi.max(grad.norm() / (1.0 + k.k().norm())).max(1.0));
        let mut next = Policy::new(k.k() - step * &grad)?;
        let mut s = step;
        while !system.is_discounted_stable(&next) && s > 1e-12 {
            s *= 0.5;
            next = Policy::new(k.k() - s * &grad)?;
        }
        k = next;
    }
    if !mu.is_finite() || phi == 0.0 {
        return Err(LqrError::InsufficientData(
            "regularity estimation trace too short".into(),
        ));
    }
    let reg = RegularityInputs {
        c_k1_tilde: c1,
        phi,
        lambda: phi,
        omega: 1.0,
        mu,
        c0,
        cstar,
        cund0,
        c_m,
        kreiss_bar: kreiss_bar_surrogate(system, k0, 3.0).unwrap_or(3.0),
    };
    reg.validate()?;
    Ok(reg)
}
