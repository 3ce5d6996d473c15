//! Sample-complexity benchmark harness: experiment configuration, sweeps
//! over target accuracies, CSV emission, and log-log slope fitting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{SchedulePlan, StepSchedule};
use crate::error::{LqrError, Result};
use crate::estimators::{minibatch_with, one_point_estimate, two_point_estimate, EstimatorKind, EstimatorSpec};
use crate::lqr::{LqrSystem, Policy};
use crate::optimizer::{train_noisy, train_sgd, TrainOutcome};
use crate::rollout::{RolloutConfig, Setting};
use crate::sampling::{NoiseKind, NoiseSpec, RngStream};

/// Step rule plus iteration budget for a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub step: StepSchedule,
    pub iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingSpec {
    RandomInit,
    NoisyDynamics,
}

/// A full experiment description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Path to the system JSON, resolved relative to the config file.
    pub system: PathBuf,
    pub setting: SettingSpec,
    pub estimator: EstimatorSpec,
    pub schedule: ScheduleSpec,
    /// Additive dynamics noise (noisy-dynamics setting only).
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Initial-state distribution; defaults to signed basis vectors.
    #[serde(default)]
    pub init: Option<NoiseSpec>,
    /// Target optimality gap of the reconstructed initial gain, on the
    /// cost scale of the chosen setting.
    pub initial_gain_gap: f64,
    /// Strictly decreasing target accuracies.
    pub epsilon_grid: Vec<f64>,
    pub runs_per_point: usize,
    pub seed: u64,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
    #[serde(default = "default_max_horizon")]
    pub max_horizon: usize,
}

fn default_truncation_tol() -> f64 {
    1e-6
}
fn default_max_horizon() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_grid.is_empty() {
            return Err(LqrError::ConfigError("epsilon_grid is empty".into()));
        }
        if self
            .epsilon_grid
            .windows(2)
            .any(|w| !(w[1] < w[0]) || w[1] <= 0.0)
            || self.epsilon_grid[0] <= 0.0
        {
            return Err(LqrError::ConfigError(
                "epsilon_grid must be strictly decreasing and positive".into(),
            ));
        }
        if self.runs_per_point == 0 {
            return Err(LqrError::ConfigError("runs_per_point must be >= 1".into()));
        }
        if self.initial_gain_gap <= 0.0 {
            return Err(LqrError::ConfigError("initial_gain_gap must be > 0".into()));
        }
        if self.setting == SettingSpec::NoisyDynamics && self.noise.is_none() {
            return Err(LqrError::ConfigError(
                "noisy_dynamics requires a noise spec".into(),
            ));
        }
        self.estimator.to_config()?;
        Ok(())
    }

    pub fn load_system(&self, base_dir: &Path) -> Result<LqrSystem> {
        let path = if self.system.is_absolute() {
            self.system.clone()
        } else {
            base_dir.join(&self.system)
        };
        LqrSystem::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One row of the accuracy-vs-samples curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_samples: f64,
    pub std_samples: f64,
    pub success_rate: f64,
    pub runs: usize,
}

/// Build the initial gain for an experiment: reconstructed at the
/// configured gap, converted from the noisy cost scale when applicable.
pub fn initial_gain(cfg: &ExperimentConfig, system: &LqrSystem) -> Result<Policy> {
    match cfg.setting {
        SettingSpec::RandomInit => {
            system.gain_at_gap(cfg.initial_gain_gap, 1e-4 * cfg.initial_gain_gap)
        }
        SettingSpec::NoisyDynamics => {
            let scale = cfg.noise.as_ref().map(|n| n.scale).unwrap_or(1.0);
            let g = system.gamma();
            let target = cfg.initial_gain_gap * (1.0 - g) / (g * scale);
            system.gain_at_gap(target, 1e-4 * target)
        }
    }
}

/// Run one seeded training trajectory of the configured experiment.
pub fn run_one(
    cfg: &ExperimentConfig,
    system: &LqrSystem,
    k0: &Policy,
    run_index: u64,
) -> Result<TrainOutcome> {
    let est_cfg = cfg.estimator.to_config()?;
    let plan = SchedulePlan::tuned(
        cfg.schedule.step,
        est_cfg.batch_size,
        cfg.schedule.iters,
        f64::INFINITY,
    );
    let stream = RngStream::derive(cfg.seed, run_index, 0, 0);
    let setting = match cfg.setting {
        SettingSpec::RandomInit => Setting::RandomInit,
        SettingSpec::NoisyDynamics => Setting::NoisyDynamics,
    };
    let rollout_cfg = RolloutConfig::new(cfg.truncation_tol, cfg.max_horizon, setting)?;
    match cfg.setting {
        SettingSpec::RandomInit => {
            let init = cfg
                .init
                .unwrap_or(NoiseSpec {
                    kind: NoiseKind::SignedBasis,
                    dim: system.state_dim(),
                    scale: 1.0,
                });
            match cfg.estimator.estimator {
                EstimatorKind::Reinforce | EstimatorKind::Minibatch => train_sgd(
                    system, k0, &plan, &est_cfg, &rollout_cfg, &init, stream, None,
                ),
                EstimatorKind::OnePoint => crate::optimizer::train_with(
                    system,
                    k0,
                    &plan,
                    None,
                    stream,
                    None,
                    |k, _t, s| {
                        minibatch_with(est_cfg.batch_size, s, |ms| {
                            one_point_estimate(system, k, &est_cfg, &rollout_cfg, &init, &mut ms.rng())
                        })
                    },
                ),
                EstimatorKind::TwoPoint => crate::optimizer::train_with(
                    system,
                    k0,
                    &plan,
                    None,
                    stream,
                    None,
                    |k, _t, s| {
                        minibatch_with(est_cfg.batch_size, s, |ms| {
                            two_point_estimate(system, k, &est_cfg, &rollout_cfg, &init, &mut ms.rng())
                        })
                    },
                ),
                EstimatorKind::ReinforceDyn => Err(LqrError::ConfigError(
                    "reinforce_dyn requires the noisy_dynamics setting".into(),
                )),
            }
        }
        SettingSpec::NoisyDynamics => {
            let noise = cfg.noise.as_ref().expect("validated");
            match cfg.estimator.estimator {
                EstimatorKind::ReinforceDyn | EstimatorKind::Minibatch => train_noisy(
                    system, k0, &plan, &est_cfg, noise, &rollout_cfg, stream, None,
                ),
                _ => Err(LqrError::ConfigError(
                    "noisy_dynamics supports the score-function estimator only".into(),
                )),
            }
        }
    }
}

/// First cumulative oracle-call count at which the analytic gap reaches
/// each target accuracy; `None` marks a failure for that target.
fn crossings(outcome: &TrainOutcome, initial_gap: f64, grid: &[f64]) -> Vec<Option<usize>> {
    grid.iter()
        .map(|&eps| {
            if initial_gap <= eps {
                return Some(0);
            }
            // a stopped (diverged) run may still have crossed earlier, so
            // the scan below applies to every status
            outcome
                .records
                .iter()
                .find(|r| r.gap <= eps)
                .map(|r| r.cum_oracle_calls)
        })
        .collect()
}

/// Run the full sweep: `runs_per_point` seeded trajectories, with the
/// per-accuracy crossing read off each trajectory's oracle-call ledger.
pub fn run_sweep(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let system = cfg.load_system(base_dir)?;
    let k0 = initial_gain(cfg, &system)?;
    let outcomes: Vec<Result<TrainOutcome>> = (0..cfg.runs_per_point as u64)
        .into_par_iter()
        .map(|i| run_one(cfg, &system, &k0, i))
        .collect();
    let mut per_run: Vec<Vec<Option<usize>>> = Vec::with_capacity(cfg.runs_per_point);
    for out in outcomes {
        let out = out?;
        let initial_gap = cfg.initial_gain_gap;
        per_run.push(crossings(&out, initial_gap, &cfg.epsilon_grid));
    }
    Ok(cfg
        .epsilon_grid
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let samples: Vec<f64> = per_run
                .iter()
                .filter_map(|row| row[j].map(|c| c as f64))
                .collect();
            let runs = cfg.runs_per_point;
            let success_rate = samples.len() as f64 / runs as f64;
            let (mean, std) = if samples.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = samples.iter().sum::<f64>() / samples.len() as f64;
                let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
                    / samples.len() as f64;
                (mean, var.sqrt())
            };
            SweepRow {
                epsilon: eps,
                mean_samples: mean,
                std_samples: std,
                success_rate,
                runs,
            }
        })
        .collect())
}

/// CSV emission: `epsilon,mean_samples,std_samples,success_rate,runs`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,mean_samples,std_samples,success_rate,runs\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epsilon, r.mean_samples, r.std_samples, r.success_rate, r.runs
        )
        .expect("string write cannot fail");
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(LqrError::InvalidInput(format!(
                "sweep CSV line {i} has {} columns, expected 5",
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| LqrError::InvalidInput(format!("sweep CSV line {i}: {e}")))
        };
        rows.push(SweepRow {
            epsilon: parse(cols[0])?,
            mean_samples: parse(cols[1])?,
            std_samples: parse(cols[2])?,
            success_rate: parse(cols[3])?,
            runs: cols[4]
                .parse()
                .map_err(|e| LqrError::InvalidInput(format!("sweep CSV line {i}: {e}")))?,
        });
    }
    Ok(rows)
}

/// Least-squares fit summary in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `log(mean_samples)` on `log(epsilon)` over the
/// rows with at least one successful run.
pub fn fit_loglog(rows: &[SweepRow]) -> Result<FitSummary> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.success_rate > 0.0 && r.mean_samples > 0.0)
        .map(|r| (r.epsilon.ln(), r.mean_samples.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(LqrError::InsufficientData(format!(
            "log-log fit needs >= 3 usable rows, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let syy = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(LqrError::InsufficientData(
            "all epsilon values coincide".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(FitSummary {
        slope,
        intercept,
        r2,
    })
}
