//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage error
//! (bad arguments, missing or malformed config file).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::diagnostics::decay_fit_series;
use crate::ensemble::{epsilon_sweep, run_ensemble, single_run};
use crate::error::{Result, SimError};
use crate::io::{ensure_dir, read_trajectory_csv, write_rows, write_snapshot, write_trajectory_csv};
use crate::splitting::splitting_self_convergence;
use crate::stats::linear_fit;
use crate::validate::run_validation;
use crate::wiener::WienerPath;

#[derive(Parser, Debug)]
#[command(name = "thinfilm", version, about = "Stochastic thin-film simulator")]
struct Cli {
    /// Configuration file (`key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overrides the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: $TFSIM_THREADS, else all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one path; writes trajectory.csv and snapshots/
    Simulate,
    /// Run ensemble_size paths; writes path_XXXX.csv and ensemble.csv
    Ensemble,
    /// Splitting self-convergence on bridge refinements of one path
    ConvergeSplit,
    /// Same path for every epsilon in epsilon_sweep
    ConvergeEps,
    /// Fit the energy decay rate of a stored trajectory CSV
    DecayFit {
        /// Trajectory CSV (`trajectory.csv` or a `path_XXXX.csv`)
        csv: PathBuf,
        /// Start of the fit window (default: 10% of the last time)
        #[arg(long)]
        t_start: Option<f64>,
    },
    /// Run the invariant suite on a small grid
    Validate,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("usage: thinfilm [--config FILE] [--seed N] [--out DIR] [--quiet] <simulate|ensemble|converge-split|converge-eps|decay-fit|validate>");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.splitting.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> std::result::Result<i32, Failure> {
    let cfg = load_config(&cli)?;
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    match &cli.command {
        Command::Simulate => {
            let traj = simulate(&cfg)?;
            let last = traj.diagnostics.last().expect("a run has records");
            say(format!(
                "t = {:.4e}: mass {:.12}, J {:.4e}, min_u {:.4e}, sup_dev {:.4e}",
                last.t, last.mass, last.energy_j, last.min_u, last.sup_dev
            ));
            say(format!(
                "{} records, {} inner steps ({} rejected), {} cubic fallbacks -> {}",
                traj.len(),
                traj.telemetry.accepted_steps,
                traj.telemetry.rejected_steps,
                traj.telemetry.cubic_fallbacks,
                cfg.output_dir.display()
            ));
        }
        Command::Ensemble => {
            let out = run_ensemble(&cfg)?;
            let s = &out.stats;
            let k = s.times.len() - 1;
            for (i, e) in &out.failures {
                say(format!("path {i} failed: {e}"));
            }
            say(format!(
                "{} paths, t = {:.4e}: J mean {:.4e} [q05 {:.4e}, q95 {:.4e}], sup_dev max {:.4e}, decayed {:.3}",
                cfg.ensemble_size, s.times[k], s.j_mean[k], s.j_q05[k], s.j_q95[k], s.supdev_max[k], s.fraction_decayed[k]
            ));
        }
        Command::ConvergeSplit => {
            let u0 = cfg.initial_field()?;
            let split = cfg.splitting_config(&u0)?;
            let path = WienerPath::sample(split.seed, split.horizon, split.intervals)?;
            let gaps = splitting_self_convergence(&u0, &split, &path, cfg.n_doublings)?;
            let rows: Vec<Vec<f64>> = gaps
                .iter()
                .map(|&(n, g)| vec![n as f64, 2.0 * split.horizon / n as f64, g])
                .collect();
            ensure_dir(&cfg.output_dir)?;
            write_rows(&cfg.output_dir.join("converge_split.csv"), &["intervals", "coarse_delta", "max_gap"], rows.iter().cloned())?;
            for r in &rows {
                say(format!("N+1 = {:>6}  gap {:.4e}", r[0], r[2]));
            }
            if rows.len() >= 2 {
                let x: Vec<f64> = rows.iter().map(|r| r[1].ln()).collect();
                let y: Vec<f64> = rows.iter().map(|r| r[2].ln()).collect();
                say(format!("observed order {:.3}", linear_fit(&x, &y).slope));
            }
        }
        Command::ConvergeEps => {
            let report = epsilon_sweep(&cfg)?;
            let rows: Vec<Vec<f64>> = report
                .entries
                .iter()
                .map(|e| vec![e.epsilon, e.min_floor, e.decay_rate.unwrap_or(f64::NAN), e.k_epsilon, e.correction])
                .collect();
            ensure_dir(&cfg.output_dir)?;
            write_rows(
                &cfg.output_dir.join("converge_eps.csv"),
                &["epsilon", "min_floor", "decay_rate", "k_epsilon", "correction"],
                rows.iter().cloned(),
            )?;
            for e in &report.entries {
                say(format!(
                    "eps {:.1e}: floor {:.4e}, rate {:?}, K_eps {:.4e}, correction {:.4e}",
                    e.epsilon, e.min_floor, e.decay_rate, e.k_epsilon, e.correction
                ));
            }
            for (w, g) in report.entries.windows(2).zip(&report.gaps) {
                say(format!("gap({:.1e}, {:.1e}) = {g:.4e}", w[0].epsilon, w[1].epsilon));
            }
        }
        Command::DecayFit { csv, t_start } => {
            let recs = read_trajectory_csv(csv)?;
            let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
            let j: Vec<f64> = recs.iter().map(|r| r.energy_j).collect();
            let start = t_start.unwrap_or(0.1 * t.last().copied().unwrap_or(0.0));
            let fit = decay_fit_series(&t, &j, start)?;
            println!("rate {:?} r_squared {:?} points {}", fit.rate, fit.r_squared, fit.points);
        }
        Command::Validate => {
            let checks = run_validation(&cfg)?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                println!("{:<4}  {:<30} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(if ok { 0 } else { 1 });
        }
    }
    Ok(0)
}

/// Runs one path from the base seed and writes its outputs.
fn simulate(cfg: &RunConfig) -> Result<crate::splitting::Trajectory> {
    let u0 = cfg.initial_field()?;
    let split = cfg.splitting_config(&u0)?;
    let traj = single_run(cfg, &split, split.seed)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &traj.diagnostics)?;
    let snaps = dir.join("snapshots");
    ensure_dir(&snaps)?;
    for (k, (t, u)) in traj.times.iter().zip(&traj.snapshots).enumerate() {
        write_snapshot(&snapshot_name(&snaps, k), u, *t, split.epsilon)?;
    }
    Ok(traj)
}

fn snapshot_name(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("snap_{k:05}.csv"))
}
