//! Gradient estimators: the single-evaluation score-function estimator for
//! both settings, classical one-point and two-point smoothing baselines, and
//! the mini-batch average.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::lqr::{LqrSystem, Policy};
use crate::rollout::{
    cost_oracle_init, q_oracle_dyn, q_oracle_init, RolloutConfig, Setting,
};
use crate::sampling::{
    sample_exploration, sample_initial_state, sample_time_index, NoiseSpec, RngStream,
};

/// Maximum time-index resamples before a draw is declared degenerate.
const MAX_RESAMPLES: usize = 10_000;

/// A single gradient estimate with its sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g: DMatrix<f64>,
    pub t_hat: usize,
    pub oracle_calls: usize,
    pub eta_norm: f64,
    pub setting: Setting,
    /// Time-index draws discarded because they exceeded the horizon.
    pub resamples: usize,
}

impl GradientEstimate {
    fn checked(self) -> Result<Self> {
        if self.g.iter().any(|v| !v.is_finite()) {
            return Err(LqrError::InvalidInput(
                "gradient estimate has non-finite entries".into(),
            ));
        }
        Ok(self)
    }

    pub fn norm(&self) -> f64 {
        self.g.norm()
    }
}

/// Estimator parameters shared across all estimator families.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Exploration standard deviation for the score-function estimator.
    pub sigma: f64,
    /// Smoothing radius for the one-/two-point baselines.
    pub smoothing_radius: f64,
    /// Mini-batch size `N_s`.
    pub batch_size: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            smoothing_radius: 1e-3,
            batch_size: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(LqrError::ConfigError("sigma must be > 0".into()));
        }
        if self.smoothing_radius <= 0.0 {
            return Err(LqrError::ConfigError("smoothing_radius must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(LqrError::ConfigError("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Estimator family selector for experiment configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Reinforce,
    ReinforceDyn,
    OnePoint,
    TwoPoint,
    Minibatch,
}

/// JSON shape: {"estimator": ..., "sigma": ..., "radius": ..., "batch": ...}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub estimator: EstimatorKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    1
}

impl EstimatorSpec {
    pub fn to_config(&self) -> Result<EstimatorConfig> {
        let cfg = EstimatorConfig {
            sigma: self.sigma,
            smoothing_radius: self.radius,
            batch_size: self.batch,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn draw_time_index(
    gamma: f64,
    max_horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let mut resamples = 0;
    loop {
        let t = sample_time_index(gamma, rng);
        if t < max_horizon {
            return Ok((t, resamples));
        }
        resamples += 1;
        if resamples > MAX_RESAMPLES {
            return Err(LqrError::Degenerate {
                max_horizon,
                resamples,
            });
        }
    }
}

/// Single-evaluation score-function estimate for the random-initialization
/// setting:
/// `G = -(1/(sigma(1-gamma))) Q^K(x_that, -K x_that + sigma eta) eta x_that^T`.
///
/// Exactly one zero-order Q evaluation is consumed.
pub fn reinforce_estimate(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let gamma = system.gamma();
    let x0 = sample_initial_state(init, rng);
    let (t_hat, resamples) = draw_time_index(gamma, rollout_cfg.max_horizon, rng)?;
    let eta = sample_exploration(system.input_dim(), rng);

    let cl = system.closed_loop(policy);
    let mut x = x0;
    let mut buf = DVector::zeros(system.state_dim());
    for _ in 0..t_hat {
        cl.mul_to(&x, &mut buf);
        std::mem::swap(&mut x, &mut buf);
    }
    let u = -(policy.k() * &x) + cfg.sigma * &eta;
    let q = q_oracle_init(system, policy, &x, &u, rollout_cfg)?;
    let g = -(q.cost / (cfg.sigma * (1.0 - gamma))) * &eta * x.transpose();
    GradientEstimate {
        g,
        t_hat,
        oracle_calls: 1,
        eta_norm: eta.norm(),
        setting: Setting::RandomInit,
        resamples,
    }
    .checked()
}

/// Score-function estimate for the noisy-dynamics setting: `x0 = 0`, the
/// state at the sampled time index is built from the noise-driven recursion,
/// and the cost-to-go comes from the noisy Q oracle.
pub fn reinforce_estimate_dyn(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    noise: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let gamma = system.gamma();
    let (t_hat, resamples) = draw_time_index(gamma, rollout_cfg.max_horizon, rng)?;

    let cl = system.closed_loop(policy);
    let mut x = DVector::zeros(system.state_dim());
    let mut buf = DVector::zeros(system.state_dim());
    for _ in 0..t_hat {
        cl.mul_to(&x, &mut buf);
        buf += noise.sample(rng);
        std::mem::swap(&mut x, &mut buf);
    }
    let eta = sample_exploration(system.input_dim(), rng);
    let u = -(policy.k() * &x) + cfg.sigma * &eta;
    let q = q_oracle_dyn(system, policy, &x, &u, rollout_cfg, noise, rng)?;
    let g = -(q.cost / (cfg.sigma * (1.0 - gamma))) * &eta * x.transpose();
    GradientEstimate {
        g,
        t_hat,
        oracle_calls: 1,
        eta_norm: eta.norm(),
        setting: Setting::NoisyDynamics,
        resamples,
    }
    .checked()
}

/// Uniform draw over matrices with unit Frobenius norm (normalized Gaussian).
fn sample_unit_direction(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let u = DMatrix::from_fn(m, n, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        });
        let norm = u.norm();
        if norm > 1e-12 {
            return u / norm;
        }
    }
}

/// One-point smoothing baseline `g = C(K + rU; x0) (mn/r) U`; biased with
/// bias `O(r)`, one oracle call.
pub fn one_point_estimate(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let r = cfg.smoothing_radius;
    let (m, n) = (system.input_dim(), system.state_dim());
    let u = sample_unit_direction(m, n, rng);
    let x0 = sample_initial_state(init, rng);
    let perturbed = Policy::new(policy.k() + r * &u)?;
    let c = cost_oracle_via_stability(system, &perturbed, &x0, rollout_cfg)?;
    GradientEstimate {
        g: c * ((m * n) as f64 / r) * u,
        t_hat: 0,
        oracle_calls: 1,
        eta_norm: 0.0,
        setting: Setting::RandomInit,
        resamples: 0,
    }
    .checked()
}

/// Evaluate the perturbed-policy cost, mapping instability to the
/// divergence error the smoothing estimators expect.
fn cost_oracle_via_stability(
    system: &LqrSystem,
    policy: &Policy,
    x0: &DVector<f64>,
    rollout_cfg: &RolloutConfig,
) -> Result<f64> {
    if !system.is_discounted_stable(policy) {
        return Err(LqrError::DivergenceDetected {
            step: 0,
            ceiling: rollout_cfg.blowup_ceiling,
        });
    }
    Ok(cost_oracle_init(system, policy, x0, rollout_cfg)?.cost)
}

/// Two-point baseline with both evaluations coupled through the same `x0`:
/// `g = [C(K+rU; x0) - C(K-rU; x0)] (mn/(2r)) U`; two oracle calls.
pub fn two_point_estimate(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    let u = sample_unit_direction(system.input_dim(), system.state_dim(), rng);
    let x0 = sample_initial_state(init, rng);
    two_point_with_direction(system, policy, cfg, rollout_cfg, &u, &x0)
}

/// Deterministic core of the two-point estimator, exposed so the draw-for-
/// draw antisymmetry under `U -> -U` is directly testable.
pub fn two_point_with_direction(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    u: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<GradientEstimate> {
    let r = cfg.smoothing_radius;
    let (m, n) = (system.input_dim(), system.state_dim());
    let plus = Policy::new(policy.k() + r * u)?;
    let minus = Policy::new(policy.k() - r * u)?;
    let c_plus = cost_oracle_via_stability(system, &plus, x0, rollout_cfg)?;
    let c_minus = cost_oracle_via_stability(system, &minus, x0, rollout_cfg)?;
    GradientEstimate {
        g: (c_plus - c_minus) * ((m * n) as f64 / (2.0 * r)) * u,
        t_hat: 0,
        oracle_calls: 2,
        eta_norm: 0.0,
        setting: Setting::RandomInit,
        resamples: 0,
    }
    .checked()
}

/// Mini-batch average of `n_s` member estimates. Members run concurrently
/// on per-member derived streams; the reduction is a fixed-order sum, so the
/// result is independent of worker count. A member failure aborts the batch.
pub fn minibatch_with<F>(n_s: usize, stream: RngStream, member: F) -> Result<GradientEstimate>
where
    F: Fn(RngStream) -> Result<GradientEstimate> + Sync,
{
    if n_s == 0 {
        return Err(LqrError::ConfigError("batch size must be >= 1".into()));
    }
    let members: Vec<Result<GradientEstimate>> = (0..n_s)
        .into_par_iter()
        .map(|i| member(stream.child(i as u64)))
        .collect();
    let mut sum: Option<DMatrix<f64>> = None;
    let mut oracle_calls = 0;
    let mut resamples = 0;
    let mut eta_sq = 0.0;
    let mut setting = Setting::RandomInit;
    for (i, res) in members.into_iter().enumerate() {
        let est = res.map_err(|e| {
            LqrError::ConfigError(format!("batch member {i} failed: {e}"))
        })?;
        oracle_calls += est.oracle_calls;
        resamples += est.resamples;
        eta_sq += est.eta_norm * est.eta_norm;
        setting = est.setting;
        match &mut sum {
            Some(s) => *s += &est.g,
            None => sum = Some(est.g),
        }
    }
    GradientEstimate {
        g: sum.expect("n_s >= 1") / n_s as f64,
        t_hat: 0,
        oracle_calls,
        eta_norm: (eta_sq / n_s as f64).sqrt(),
        setting,
        resamples,
    }
    .checked()
}

/// Mini-batch of the random-initialization score-function estimator.
pub fn minibatch_estimate(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    init: &NoiseSpec,
    stream: RngStream,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    minibatch_with(cfg.batch_size, stream, |s| {
        reinforce_estimate(system, policy, cfg, rollout_cfg, init, &mut s.rng())
    })
}

/// Mini-batch of the noisy-dynamics score-function estimator.
pub fn minibatch_estimate_dyn(
    system: &LqrSystem,
    policy: &Policy,
    cfg: &EstimatorConfig,
    rollout_cfg: &RolloutConfig,
    noise: &NoiseSpec,
    stream: RngStream,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    minibatch_with(cfg.batch_size, stream, |s| {
        reinforce_estimate_dyn(system, policy, cfg, rollout_cfg, noise, &mut s.rng())
    })
}
