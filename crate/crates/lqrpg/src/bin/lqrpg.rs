//! Command-line harness for the LQR policy-gradient toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use lqrpg::bench::{fit_loglog, initial_gain, run_one, run_sweep, sweep_to_csv, ExperimentConfig, SettingSpec};
use lqrpg::bounds::{
    decay_envelope, estimate_regularity, gamma_threshold, rho_bound, xi_constants,
    RegularityInputs, Variant,
};
use lqrpg::error::LqrError;
use lqrpg::lqr::{spectral_radius, LqrSystem, Policy, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use lqrpg::sampling::RngStream;

#[derive(Parser)]
#[command(
    name = "lqrpg",
    about = "Model-free policy gradient toolkit for discounted LQR",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the relevant JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread count (results are identical for any value).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati equation: print K*, P, and the optimal cost.
    Solve(Common),
    /// Evaluate a gain: cost, gradient norm, spectral radius.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// JSON file holding the gain as row-major nested arrays.
        #[arg(long)]
        gain: PathBuf,
    },
    /// Monte-Carlo estimator diagnostics against the analytic gradient.
    EstimateGrad {
        #[command(flatten)]
        common: Common,
        /// Number of estimator draws.
        #[arg(long, default_value_t = 20_000)]
        draws: u64,
    },
    /// Print the theory-constant report for a system + regularity inputs.
    Bounds(Common),
    /// One training run; writes the per-iteration CSV and a JSON summary.
    Train(Common),
    /// Accuracy sweep with log-log fit; writes sweep CSV and fit JSON.
    Sweep(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Bounds(c) | Command::Train(c) | Command::Sweep(c) => c,
        Command::Evaluate { common, .. } | Command::EstimateGrad { common, .. } => common,
    };
    if let Some(threads) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            return fail(&LqrError::ConfigError(format!("thread pool: {e}")));
        }
    }
    let result = match cli.command {
        Command::Solve(c) => cmd_solve(&c),
        Command::Evaluate { common, gain } => cmd_evaluate(&common, &gain),
        Command::EstimateGrad { common, draws } => cmd_estimate_grad(&common, draws),
        Command::Bounds(c) => cmd_bounds(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Sweep(c) => cmd_sweep(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
fn fail(e: &LqrError) -> ExitCode {
    let (code, kind) = match e {
        LqrError::ConfigError(_)
        | LqrError::InvalidInput(_)
        | LqrError::Json(_)
        | LqrError::InfeasibleDelta { .. } => (2u8, "config_error"),
        _ => (1u8, "runtime_error"),
    };
    eprintln!(
        "{}",
        json!({"error": {"kind": kind, "message": e.to_string()}})
    );
    ExitCode::from(code)
}

fn base_dir(config: &Path) -> PathBuf {
    config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn load_system(path: &Path) -> Result<LqrSystem, LqrError> {
    LqrSystem::from_json(&std::fs::read_to_string(path)?)
}

fn write_or_print(out: &Option<PathBuf>, name: &str, content: &str) -> Result<(), LqrError> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), content)?;
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_solve(c: &Common) -> Result<(), LqrError> {
    let system = load_system(&c.config)?;
    let p = system.solve_dare(DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
    let kstar = system.optimal_gain(&p)?;
    let report = json!({
        "k_star": matrix_rows(kstar.k()),
        "p": matrix_rows(p.matrix()),
        "optimal_cost": system.population_cost(&kstar)?,
        "residual": system.dare_residual(&p)?,
        "rho_closed_loop": spectral_radius(&system.closed_loop(&kstar)),
    });
    write_or_print(&c.out, "solve.json", &serde_json::to_string_pretty(&report)?)
}

fn cmd_evaluate(c: &Common, gain: &Path) -> Result<(), LqrError> {
    let system = load_system(&c.config)?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(gain)?)?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(LqrError::InvalidInput("gain must be a rectangular matrix".into()));
    }
    let k = Policy::new(DMatrix::from_row_iterator(
        rows.len(),
        rows[0].len(),
        rows.iter().flatten().copied(),
    ))?;
    let report = system.stability_report(&k, true);
    let (cost, grad_norm) = if report.discounted_stable {
        (
            Some(system.population_cost(&k)?),
            Some(system.analytic_gradient(&k)?.norm()),
        )
    } else {
        (None, None)
    };
    let out = json!({
        "cost": cost,
        "grad_norm": grad_norm,
        "rho": report.spectral_radius,
        "discounted_stable": report.discounted_stable,
        "kreiss_constant": report.kreiss_constant,
    });
    write_or_print(&c.out, "evaluate.json", &serde_json::to_string_pretty(&out)?)
}

fn cmd_estimate_grad(c: &Common, draws: u64) -> Result<(), LqrError> {
    let mut cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&c.config)?)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let dir = base_dir(&c.config);
    let system = cfg.load_system(&dir)?;
    let k0 = initial_gain(&cfg, &system)?;
    // The analytic gradient is taken under E[x0 x0^T] = I; the sampled
    // initial states have covariance scale * I.
    let target = match cfg.setting {
        SettingSpec::RandomInit => {
            let scale = cfg.init.as_ref().map(|n| n.scale).unwrap_or(1.0);
            system.analytic_gradient(&k0)? * scale
        }
        SettingSpec::NoisyDynamics => {
            let scale = cfg.noise.as_ref().map(|n| n.scale).unwrap_or(1.0);
            system.analytic_gradient(&k0)? * (scale * system.gamma() / (1.0 - system.gamma()))
        }
    };
    let est_cfg = cfg.estimator.to_config()?;
    let rollout_cfg = lqrpg::rollout::RolloutConfig::new(
        cfg.truncation_tol,
        cfg.max_horizon,
        match cfg.setting {
            SettingSpec::RandomInit => lqrpg::rollout::Setting::RandomInit,
            SettingSpec::NoisyDynamics => lqrpg::rollout::Setting::NoisyDynamics,
        },
    )?;
    let init = cfg.init.unwrap_or(lqrpg::sampling::NoiseSpec {
        kind: lqrpg::sampling::NoiseKind::SignedBasis,
        dim: system.state_dim(),
        scale: 1.0,
    });
    let (m, n) = (system.input_dim(), system.state_dim());
    let mut sum = DMatrix::<f64>::zeros(m, n);
    let mut sum_sq = DMatrix::<f64>::zeros(m, n);
    for i in 0..draws {
        let mut rng = RngStream::derive(cfg.seed, 0, 0, i).rng();
        let est = match cfg.setting {
            SettingSpec::RandomInit => lqrpg::estimators::reinforce_estimate(
                &system, &k0, &est_cfg, &rollout_cfg, &init, &mut rng,
            )?,
            SettingSpec::NoisyDynamics => lqrpg::estimators::reinforce_estimate_dyn(
                &system,
                &k0,
                &est_cfg,
                &rollout_cfg,
                cfg.noise.as_ref().expect("validated"),
                &mut rng,
            )?,
        };
        sum += &est.g;
        sum_sq += est.g.component_mul(&est.g);
    }
    let mean = sum / draws as f64;
    let mut max_z: f64 = 0.0;
    for i in 0..m {
        for j in 0..n {
            let var = (sum_sq[(i, j)] / draws as f64 - mean[(i, j)] * mean[(i, j)]).max(0.0);
            let stderr = (var / draws as f64).sqrt();
            if stderr > 0.0 {
                max_z = max_z.max((mean[(i, j)] - target[(i, j)]).abs() / stderr);
            }
        }
    }
    let report = json!({
        "draws": draws,
        "mc_mean": matrix_rows(&mean),
        "analytic_gradient": matrix_rows(&target),
        "mean_abs_error": (&mean - &target).norm(),
        "max_componentwise_z_score": max_z,
        "within_3_standard_errors": max_z <= 3.0,
    });
    write_or_print(&c.out, "estimate_grad.json", &serde_json::to_string_pretty(&report)?)
}

#[derive(Serialize, Deserialize)]
struct BoundsConfig {
    system: PathBuf,
    #[serde(default = "default_sigma")]
    sigma: f64,
    /// Explicit regularity constants; when omitted they are estimated
    /// empirically from a descent trace starting at the reconstructed gain.
    #[serde(default)]
    regularity: Option<RegularityInputs>,
    /// Optimality gap at which the initial gain is reconstructed.
    #[serde(default = "default_gap")]
    initial_gain_gap: f64,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_gap() -> f64 {
    1.0
}

fn cmd_bounds(c: &Common) -> Result<(), LqrError> {
    let cfg: BoundsConfig = serde_json::from_str(&std::fs::read_to_string(&c.config)?)?;
    let dir = base_dir(&c.config);
    let sys_path = if cfg.system.is_absolute() {
        cfg.system.clone()
    } else {
        dir.join(&cfg.system)
    };
    let system = load_system(&sys_path)?;
    let reg = match cfg.regularity {
        Some(r) => {
            r.validate()?;
            r
        }
        None => {
            let k0 = system.gain_at_gap(cfg.initial_gain_gap, 1e-4 * cfg.initial_gain_gap)?;
            estimate_regularity(&system, &k0, 50, system.state_dim() as f64)?
        }
    };
    let xi_init = xi_constants(&system, &reg, cfg.sigma, Variant::Init)?;
    let xi_dyn = xi_constants(&system, &reg, cfg.sigma, Variant::Dyn)?;
    let (m_env, r_env) = decay_envelope(system.q(), reg.c0, reg.cstar);
    let report = json!({
        "gamma": system.gamma(),
        "gamma_threshold_init": gamma_threshold(system.q(), reg.cund0, Variant::Init),
        "gamma_threshold_dyn": gamma_threshold(system.q(), reg.cund0, Variant::Dyn),
        "rho_bound": rho_bound(system.q(), reg.c0, reg.cstar, system.gamma()),
        "decay_envelope": {"m": m_env, "r": r_env},
        "regularity": reg,
        "xi_init": xi_init,
        "xi_dyn": xi_dyn,
    });
    write_or_print(&c.out, "bounds.json", &serde_json::to_string_pretty(&report)?)
}

fn cmd_train(c: &Common) -> Result<(), LqrError> {
    let mut cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&c.config)?)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let dir = base_dir(&c.config);
    let system = cfg.load_system(&dir)?;
    let k0 = initial_gain(&cfg, &system)?;
    let outcome = run_one(&cfg, &system, &k0, 0)?;
    let csv = outcome.to_csv();
    let summary = outcome.summary_json();
    match &c.out {
        Some(out) => {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("train.csv"), &csv)?;
            std::fs::write(out.join("train_summary.json"), &summary)?;
            println!("{summary}");
        }
        None => {
            print!("{csv}");
            println!("{summary}");
        }
    }
    Ok(())
}

fn cmd_sweep(c: &Common) -> Result<(), LqrError> {
    let mut cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&c.config)?)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let dir = base_dir(&c.config);
    let rows = run_sweep(&cfg, &dir)?;
    let csv = sweep_to_csv(&rows);
    let fit_json = match fit_loglog(&rows) {
        Ok(fit) => serde_json::to_string_pretty(&fit)?,
        Err(e) => serde_json::to_string_pretty(&json!({"error": e.to_string()}))?,
    };
    match &c.out {
        Some(out) => {
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("sweep.csv"), &csv)?;
            std::fs::write(out.join("fit.json"), &fit_json)?;
            println!("{fit_json}");
        }
        None => {
            print!("{csv}");
            println!("{fit_json}");
        }
    }
    Ok(())
}
