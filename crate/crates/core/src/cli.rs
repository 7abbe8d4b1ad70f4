//! Command-line runner. Every subcommand writes CSVs into the output
//! directory plus `manifest.txt` (effective config, seeds, versions) and
//! `timestamp.txt` (the only file that changes between identical runs).
//!
//! Exit codes: 0 success, 1 a check failed, 2 parse or validation error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bsde::{g_expectation_girsanov, lq_cost_from_paths, solve_bsde_lsmc, BsdePaths, LinearG};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::lq::{write_value_sweep, QuadraticValue, ValueSweepRow};
use crate::mkvsde::{gaussian_cloud, generate_common_path, simulate_lq_closed_loop, FeedbackSchedule};
use crate::riccati::solve_riccati;
use crate::verify::{derive_seed, dpp_residual_check, noise_paths, run_suite, summary_text, write_reports_csv, CheckReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mkv-lab",
    version,
    about = "Mean-field LQ control under a g-expectation: solvers, simulation and checks",
    after_help = "Precedence: config file < --set (in order) < --seed/--particles/--paths/--steps/--out."
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file (`section.key = value` lines)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (seeds.master)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (output.dir)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Particles per cloud (grids.particles)
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    /// Common-noise paths (grids.paths)
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Time steps of the particle system (grids.sde_steps)
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Override any config entry, e.g. --set model.beta=0.2
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Solve the Riccati system and export it
    Riccati,
    /// V(t, μ) over the configured times for the initial cloud
    Value,
    /// Export one closed-loop particle ensemble and its noise path
    Simulate,
    /// Estimate J_g(u*) with its standard error
    Cost,
    /// g-expectation of W_T: Girsanov against LSMC
    Gexp,
    /// Dynamic programming residual on [t, t+δ]
    Dpp,
    /// Run the full check suite
    VerifyAll,
    /// HJB residual over the configured times
    HjbResidual,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Riccati => "riccati",
            Command::Value => "value",
            Command::Simulate => "simulate",
            Command::Cost => "cost",
            Command::Gexp => "gexp",
            Command::Dpp => "dpp",
            Command::VerifyAll => "verify-all",
            Command::HjbResidual => "hjb-residual",
        }
    }
}

/// Parses arguments, runs the subcommand, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("mkv-lab: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

/// Overrides in precedence order.
pub fn overrides(common: &CommonArgs) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("seeds.master", common.seed.map(|v| v.to_string()));
    push("grids.particles", common.particles.map(|v| v.to_string()));
    push("grids.paths", common.paths.map(|v| v.to_string()));
    push("grids.sde_steps", common.steps.map(|v| v.to_string()));
    push("output.dir", common.out.as_ref().map(|p| p.display().to_string()));
    Ok(out)
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let ov = overrides(common)?;
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &ov),
        None => ExperimentConfig::from_str_with(crate::config::DEFAULT_CONFIG, &ov),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io { path, source })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

fn write_manifest(dir: &Path, cfg: &ExperimentConfig, command: Command) -> Result<()> {
    let text = format!(
        "command = {}\nmkv-lab = {}\nseed = {}\n\n{}",
        command.name(),
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        cfg.to_text()
    );
    write_text(dir, "manifest.txt", &text)?;
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_text(dir, "timestamp.txt", &format!("{now}\n"))
}

fn finish_reports(dir: &Path, reports: &[CheckReport]) -> Result<bool> {
    write_reports_csv(create(dir, "checks.csv")?, reports)?;
    let summary = summary_text(reports);
    write_text(dir, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(reports.iter().all(|r| r.passed))
}

/// Runs a parsed command; `Ok(false)` means a check failed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = load_config(&cli.common)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    let model = &cfg.model;
    let ric = solve_riccati(model, cfg.grids.riccati_steps)?;
    let qv = QuadraticValue::new(model, &ric)?;
    let horizon = model.horizon();
    let initial = || gaussian_cloud(cfg.grids.particles, &cfg.initial_mean, cfg.initial_std, derive_seed(cfg.seed, 100));
    let mut ok = true;

    match cli.command {
        Command::Riccati => {
            ric.write_csv(create(&dir, "riccati.csv")?)?;
            println!("riccati: {} steps on [0, {horizon}]", ric.steps());
        }
        Command::Value | Command::HjbResidual => {
            let mu = initial()?;
            // the residual is defined on [0, T); the value sweep records NaN at T
            let rows = cfg
                .value_times
                .iter()
                .filter(|&&t| cli.command == Command::Value || t < horizon)
                .map(|&t| {
                    Ok(ValueSweepRow {
                        t,
                        value: qv.value_function(t, &mu)?,
                        residual: if t < horizon { qv.hjb_residual(t, &mu)? } else { f64::NAN },
                        n_samples: mu.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let name = if cli.command == Command::Value { "value.csv" } else { "hjb_residual.csv" };
            write_value_sweep(create(&dir, name)?, &rows)?;
            for r in &rows {
                println!("t={:.4} V={:.6} residual={:.3e}", r.t, r.value, r.residual);
            }
        }
        Command::Simulate => {
            let path = generate_common_path(0.0, horizon, cfg.grids.sde_steps, derive_seed(cfg.seed, 1))?;
            let ens = simulate_lq_closed_loop(model, &ric, &initial()?, &path)?;
            ens.write_csv(create(&dir, "ensemble.csv")?)?;
            path.write_csv(create(&dir, "noise.csv")?)?;
            println!("simulate: N={} steps={}", ens.n_particles(), ens.steps());
        }
        Command::Cost => {
            let mu = initial()?;
            let paths = noise_paths(0.0, horizon, cfg.grids.sde_steps, cfg.grids.paths, derive_seed(cfg.seed, 300))?;
            let schedule = FeedbackSchedule::optimal(&qv, &paths[0].times())?;
            let est = lq_cost_from_paths(model, &schedule, &mu, &paths)?;
            let half_v = 0.5 * qv.value_function(0.0, &mu)?;
            let mut w = csv::Writer::from_writer(create(&dir, "cost.csv")?);
            w.write_record(["J_g", "stderr", "half_V", "particles", "paths", "steps"])?;
            w.write_record([
                est.j_g.to_string(),
                est.stderr.to_string(),
                half_v.to_string(),
                cfg.grids.particles.to_string(),
                cfg.grids.paths.to_string(),
                cfg.grids.sde_steps.to_string(),
            ])?;
            w.flush().map_err(csv::Error::from)?;
            println!("J_g = {:.6} ± {:.2e}   V(0,μ)/2 = {half_v:.6}", est.j_g, est.stderr);
        }
        Command::Gexp => {
            let beta = model.beta();
            let paths = BsdePaths::from_noise_paths(&noise_paths(
                0.0,
                horizon,
                cfg.grids.sde_steps.min(50),
                cfg.gexp_paths.min(20_000),
                derive_seed(cfg.seed, 700),
            )?)?;
            let wt = paths.brownian_terminals();
            let (g, gse) = g_expectation_girsanov(beta, &wt, &wt, horizon)?;
            let sol = solve_bsde_lsmc(&LinearG { beta }, &wt, &paths)?;
            sol.write_csv(create(&dir, "gexp_bsde.csv")?)?;
            let mut w = csv::Writer::from_writer(create(&dir, "gexp.csv")?);
            w.write_record(["method", "estimate", "stderr", "exact"])?;
            let exact = (beta * horizon).to_string();
            w.write_record(["girsanov".to_string(), g.to_string(), gse.to_string(), exact.clone()])?;
            w.write_record(["lsmc".to_string(), sol.y0().to_string(), sol.y0_stderr().to_string(), exact])?;
            w.flush().map_err(csv::Error::from)?;
            println!(
                "E_g[W_T]: girsanov {g:.5} ± {gse:.1e}, lsmc {:.5} ± {:.1e}, exact {:.5}",
                sol.y0(),
                sol.y0_stderr(),
                beta * horizon
            );
        }
        Command::Dpp => {
            let report = dpp_residual_check(&qv, cfg.dpp_t, cfg.dpp_delta, &initial()?, cfg.grids.sizes(), 0.0, derive_seed(cfg.seed, 500))?;
            ok = finish_reports(&dir, &[report])?;
        }
        Command::VerifyAll => {
            let reports = run_suite(model, &cfg.suite())?;
            ok = finish_reports(&dir, &reports)?;
        }
    }
    write_manifest(&dir, &cfg, cli.command)?;
    Ok(ok)
}
