//! Benchmark systems used throughout the test and benchmark suites.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::lqr::{LqrSystem, Policy};

/// Three-state system with strong state/input coupling and an unstable
/// open loop; the random-initialization benchmark problem.
pub fn coupled_three_state(gamma: f64) -> Result<LqrSystem> {
    LqrSystem::new(
        DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -10.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        DMatrix::from_row_slice(3, 3, &[1.0, -10.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]),
        DMatrix::from_row_slice(3, 3, &[5.0, -3.0, 0.0, -3.0, 5.0, -2.0, 0.0, -2.0, 5.0]),
        gamma,
    )
}

/// Near-memoryless scaled-identity system with heavy state and input
/// penalties; the noisy-dynamics benchmark problem (additive Gaussian noise
/// with covariance `I/25` in the benchmark configuration).
pub fn scaled_identity_three_state(gamma: f64) -> Result<LqrSystem> {
    LqrSystem::new(
        DMatrix::identity(3, 3) * 0.1,
        DMatrix::identity(3, 3) * 0.01,
        DMatrix::identity(3, 3) * 100.0,
        DMatrix::identity(3, 3) * 100.0,
        gamma,
    )
}

/// Initial gain for the random-initialization benchmark: optimality gap
/// `C(K0) - C(K*) = 11.716 +- 0.001` on [`coupled_three_state`] at the
/// benchmark discount 0.9.
pub fn coupled_benchmark_gain(system: &LqrSystem) -> Result<Policy> {
    system.gain_at_gap(11.716, 0.001)
}

/// Initial gain for the noisy-dynamics benchmark: gap 3.12 on the
/// noise-driven cost scale, i.e. an initial-state-cost gap of
/// `3.12 (1-gamma) / (gamma * noise_scale)`.
pub fn noisy_benchmark_gain(system: &LqrSystem, noise_scale: f64) -> Result<Policy> {
    let g = system.gamma();
    let target = 3.12 * (1.0 - g) / (g * noise_scale);
    system.gain_at_gap(target, 0.001 * target / 3.12)
}
