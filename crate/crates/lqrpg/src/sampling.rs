//! Randomness sources: initial-state and additive-noise distributions, the
//! geometric time-index sampler, Gaussian exploration, and a counter-based
//! stream derivation so parallel fan-out never changes results.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};

/// Distribution family for initial states and additive dynamics noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform over the `2n` vectors `{+-sqrt(n) e_i}` (times `sqrt(scale)`),
    /// so that `E[v v^T] = scale I` with `||v||^2 = n * scale` exactly.
    SignedBasis,
    /// Each coordinate `+-sqrt(scale)` i.i.d.; same moments and the same
    /// almost-sure norm bound as `signed_basis`.
    ScaledRademacher,
    /// `v ~ N(0, scale I)`. Has the right moments but an unbounded norm,
    /// so it violates the almost-sure bound the estimator analysis assumes;
    /// flagged via [`NoiseSpec::assumption_violating`].
    GaussianUnbounded,
}

/// A zero-mean distribution on `R^dim` with `E[v v^T] = scale * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub dim: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, dim: usize, scale: f64) -> Result<Self> {
        let spec = Self { kind, dim, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(LqrError::InvalidInput("noise dimension must be >= 1".into()));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(LqrError::InvalidInput(format!(
                "noise scale must be finite and nonnegative, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Almost-sure bound on `||v||^2` (`C_m`) for bounded kinds; for the
    /// Gaussian kind this is only the second-moment total `n * scale`, and
    /// [`assumption_violating`](Self::assumption_violating) is true.
    pub fn norm_sq_bound(&self) -> f64 {
        self.dim as f64 * self.scale
    }

    /// True when the almost-sure norm bound does not actually hold.
    pub fn assumption_violating(&self) -> bool {
        matches!(self.kind, NoiseKind::GaussianUnbounded)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.dim;
        let root_scale = self.scale.sqrt();
        match self.kind {
            NoiseKind::SignedBasis => {
                let atom = rng.gen_range(0..2 * n);
                let (i, sign) = (atom / 2, if atom % 2 == 0 { 1.0 } else { -1.0 });
                let mut v = DVector::zeros(n);
                v[i] = sign * (n as f64).sqrt() * root_scale;
                v
            }
            NoiseKind::ScaledRademacher => DVector::from_fn(n, |_, _| {
                if rng.gen::<bool>() {
                    root_scale
                } else {
                    -root_scale
                }
            }),
            NoiseKind::GaussianUnbounded => DVector::from_fn(n, |_, _| {
                root_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }),
        }
    }
}

/// A reproducible random stream: identical `(seed, stream_id)` gives an
/// identical draw sequence regardless of thread count or scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

/// 64-bit finalizer (splitmix64) used to decorrelate counter-derived ids.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derive a stream from hierarchical counters, e.g. (run, iteration,
    /// sample index). Pure function of its arguments.
    pub fn derive(seed: u64, run: u64, iteration: u64, sample: u64) -> Self {
        let id = mix64(mix64(mix64(run) ^ iteration.wrapping_mul(0xd6e8_feb8_6659_fd93)) ^ sample);
        Self {
            seed,
            stream_id: id,
        }
    }

    /// Child stream for nested fan-out (e.g. per-member batch streams).
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream_id: mix64(self.stream_id ^ mix64(index ^ 0xa076_1d64_78bd_642f)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream_id.to_le_bytes());
        key[16..24].copy_from_slice(&mix64(self.seed ^ self.stream_id).to_le_bytes());
        key[24..].copy_from_slice(&mix64(self.stream_id.rotate_left(32)).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// One draw from the initial-state / noise distribution.
pub fn sample_initial_state(spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    spec.sample(rng)
}

/// One draw from the geometric time distribution `P(t) = (1-gamma) gamma^t`,
/// by inverse CDF on a single uniform.
pub fn sample_time_index(gamma: f64, rng: &mut ChaCha8Rng) -> usize {
    debug_assert!(gamma > 0.0 && gamma < 1.0);
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    (u.ln() / gamma.ln()).floor() as usize
}

/// Standard normal exploration direction of dimension `m`; the exploration
/// scale `sigma` is applied by the caller.
pub fn sample_exploration(m: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(m, |_, _| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        RngStream::new(seed, 0).rng()
    }

    #[test]
    fn signed_basis_support_and_moments_by_enumeration() {
        // the 2n-point support {+-sqrt(n) e_i} has E[v v^T] = I exactly
        let spec = NoiseSpec::new(NoiseKind::SignedBasis, 3, 1.0).unwrap();
        let mut r = rng(1);
        let mut seen = std::collections::BTreeSet::new();
        let mut second = DMatrix::zeros(3, 3);
        for _ in 0..600 {
            let v = spec.sample(&mut r);
            assert!((v.norm_squared() - 3.0).abs() < 1e-12);
            let nz: Vec<usize> = (0..3).filter(|&i| v[i] != 0.0).collect();
            assert_eq!(nz.len(), 1);
            seen.insert((nz[0], v[nz[0]] > 0.0));
            second += &v * v.transpose();
        }
        assert_eq!(seen.len(), 6, "all six atoms should appear");
        // exact enumeration of the uniform law over the support
        let mut exact = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for sign in [1.0, -1.0] {
                let mut v = DVector::zeros(3);
                v[i] = sign * 3.0_f64.sqrt();
                exact += (&v * v.transpose()) / 6.0;
            }
        }
        assert!((exact - DMatrix::identity(3, 3)).norm() < 1e-12);
        let _ = second;
    }

    #[test]
    fn empirical_moments_all_kinds() {
        let n = 3;
        for kind in [
            NoiseKind::SignedBasis,
            NoiseKind::ScaledRademacher,
            NoiseKind::GaussianUnbounded,
        ] {
            let spec = NoiseSpec::new(kind, n, 1.0).unwrap();
            let mut r = rng(42);
            let samples = 1_000_000;
            let mut mean = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            let mut max_norm_sq = 0.0_f64;
            for _ in 0..samples {
                let v = spec.sample(&mut r);
                max_norm_sq = max_norm_sq.max(v.norm_squared());
                mean += &v;
                cov += &v * v.transpose();
            }
            mean /= samples as f64;
            cov /= samples as f64;
            // 4-sigma band; per-coordinate variance is 1, so std err = 1/sqrt(N)
            let band = 4.0 / (samples as f64).sqrt();
            for i in 0..n {
                assert!(mean[i].abs() <= band, "{kind:?} mean[{i}] = {}", mean[i]);
            }
            assert!(
                (cov - DMatrix::identity(n, n)).norm() <= 0.02,
                "{kind:?} covariance off"
            );
            if !spec.assumption_violating() {
                assert!((max_norm_sq - spec.norm_sq_bound()).abs() < 1e-12);
            } else {
                assert!(max_norm_sq > spec.norm_sq_bound());
            }
        }
    }

    #[test]
    fn scale_is_a_covariance_multiplier() {
        let spec = NoiseSpec::new(NoiseKind::GaussianUnbounded, 2, 1.0 / 25.0).unwrap();
        let mut r = rng(5);
        let mut cov = DMatrix::zeros(2, 2);
        let samples = 500_000;
        for _ in 0..samples {
            let v = spec.sample(&mut r);
            cov += &v * v.transpose();
        }
        cov /= samples as f64;
        assert!((cov - DMatrix::identity(2, 2) / 25.0).norm() < 0.002);
    }

    #[test]
    fn time_index_mean_and_mass_at_zero() {
        let mut r = rng(7);
        let samples = 1_000_000;
        let mut sum = 0u64;
        let mut zeros = 0u64;
        for _ in 0..samples {
            let t = sample_time_index(0.9, &mut r);
            sum += t as u64;
            zeros += (t == 0) as u64;
        }
        let mean = sum as f64 / samples as f64;
        assert!((mean - 9.0).abs() <= 0.09, "mean {mean}");
        let p0 = zeros as f64 / samples as f64;
        assert!((p0 - 0.1).abs() <= 0.002, "P(t=0) = {p0}");

        let mut r = rng(8);
        let small: usize = (0..10_000)
            .filter(|_| sample_time_index(0.01, &mut r) == 0)
            .count();
        assert!(small as f64 / 10_000.0 > 0.985);
    }

    #[test]
    fn time_index_chi_squared_goodness_of_fit() {
        // 100 atoms plus a tail bucket; df = 100, critical value 149.449
        // at significance 0.001
        let gamma: f64 = 0.9;
        let samples = 1_000_000;
        let mut counts = [0u64; 101];
        let mut r = rng(9);
        for _ in 0..samples {
            let t = sample_time_index(gamma, &mut r).min(100);
            counts[t] += 1;
        }
        let mut stat = 0.0;
        for (t, &c) in counts.iter().enumerate() {
            let p = if t < 100 {
                (1.0 - gamma) * gamma.powi(t as i32)
            } else {
                gamma.powi(100)
            };
            let expected = p * samples as f64;
            stat += (c as f64 - expected).powi(2) / expected;
        }
        assert!(stat < 149.449, "chi-squared statistic {stat}");
    }

    #[test]
    fn exploration_chi_moments() {
        let mut r = rng(10);
        let samples = 1_000_000;
        let mut sum_sq4 = 0.0;
        for _ in 0..samples {
            let eta = sample_exploration(4, &mut r);
            sum_sq4 += eta.norm_squared();
        }
        assert!((sum_sq4 / samples as f64 - 4.0).abs() <= 0.02);

        for (m, expected, tol) in [(1usize, 3.0, 0.05), (2, 8.0, 0.1)] {
            let mut r = rng(11 + m as u64);
            let mut sum4 = 0.0;
            for _ in 0..samples {
                let eta = sample_exploration(m, &mut r);
                sum4 += eta.norm_squared().powi(2);
            }
            let mean4 = sum4 / samples as f64;
            assert!((mean4 - expected).abs() <= tol, "m={m}: E||eta||^4 = {mean4}");
        }
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = RngStream::derive(123, 4, 5, 6);
        let b = RngStream::derive(123, 4, 5, 6);
        assert_eq!(a, b);
        let mut ra = a.rng();
        let mut rb = b.rng();
        for _ in 0..100 {
            assert_eq!(ra.gen::<u64>(), rb.gen::<u64>());
        }
        let c = RngStream::derive(123, 4, 5, 7);
        assert_ne!(a.stream_id, c.stream_id);
        let mut rc = c.rng();
        let overlap = (0..100).filter(|_| a.rng().gen::<u64>() == rc.gen::<u64>()).count();
        assert!(overlap < 100);
        assert_ne!(a.child(0).stream_id, a.child(1).stream_id);
    }

    #[test]
    fn noise_spec_json_shape() {
        let spec = NoiseSpec::new(NoiseKind::GaussianUnbounded, 3, 0.04).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"kind":"gaussian_unbounded","dim":3,"scale":0.04}"#);
        let back: NoiseSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let defaulted: NoiseSpec =
            serde_json::from_str(r#"{"kind":"signed_basis","dim":2}"#).unwrap();
        assert_eq!(defaulted.scale, 1.0);
    }
}
