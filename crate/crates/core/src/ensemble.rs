//! Independent replicas over Wiener paths, their statistics, and the
//! epsilon sweep.
//!
//! Replica `i` draws its path from `derive_seed(seed, [i])`. Replicas run on
//! a private rayon pool and results are reduced in replica order, so outputs
//! do not depend on the worker count.

use std::path::Path;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::diagnostics::{decay_fit, k_epsilon, sobolev_bound, DiagnosticsRecord};
use crate::error::{Result, SimError};
use crate::io::{ensure_dir, path_csv_name, read_trajectory_csv, write_ensemble_csv, write_trajectory_csv};
use crate::splitting::{run_splitting, SplittingConfig, Trajectory};
use crate::stats::{mean, quantile};
use crate::wiener::{derive_seed, WienerPath};

/// Environment variable consulted for the worker count.
pub const THREADS_ENV: &str = "TFSIM_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub j_mean: Vec<f64>,
    pub j_q05: Vec<f64>,
    pub j_q95: Vec<f64>,
    pub supdev_mean: Vec<f64>,
    pub supdev_max: Vec<f64>,
    /// Share of paths with `sup_dev < decay_tol`.
    pub fraction_decayed: Vec<f64>,
}

impl EnsembleStats {
    /// Pointwise statistics over paths recorded at identical times.
    pub fn from_records(paths: &[Vec<DiagnosticsRecord>], decay_tol: f64) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| SimError::InsufficientData("no successful paths".into()))?;
        let times: Vec<f64> = first.iter().map(|r| r.t).collect();
        if paths
            .iter()
            .any(|p| p.len() != times.len() || p.iter().zip(&times).any(|(r, t)| r.t != *t))
        {
            return Err(SimError::InvalidParameter("paths were recorded at different times".into()));
        }
        let k = times.len();
        let mut s = Self {
            times,
            j_mean: Vec::with_capacity(k),
            j_q05: Vec::with_capacity(k),
            j_q95: Vec::with_capacity(k),
            supdev_mean: Vec::with_capacity(k),
            supdev_max: Vec::with_capacity(k),
            fraction_decayed: Vec::with_capacity(k),
        };
        for i in 0..k {
            let j: Vec<f64> = paths.iter().map(|p| p[i].energy_j).collect();
            let d: Vec<f64> = paths.iter().map(|p| p[i].sup_dev).collect();
            s.j_mean.push(mean(&j));
            s.j_q05.push(quantile(&j, 0.05));
            s.j_q95.push(quantile(&j, 0.95));
            s.supdev_mean.push(mean(&d));
            s.supdev_max.push(d.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            s.fraction_decayed
                .push(d.iter().filter(|&&x| x < decay_tol).count() as f64 / d.len() as f64);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub stats: EnsembleStats,
    /// One entry per replica, `None` where the run failed.
    pub trajectories: Vec<Option<Trajectory>>,
    pub failures: Vec<(usize, SimError)>,
}

pub fn replica_seed(base: u64, replica: usize) -> u64 {
    derive_seed(base, &[replica as u64])
}

/// `requested` if positive, else the environment variable, else the number
/// of available cores.
pub fn worker_count(requested: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(threads))
        .build()
        .map_err(|e| SimError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// One run of `cfg` along the path drawn from `seed`.
pub fn single_run(cfg: &RunConfig, split: &SplittingConfig, seed: u64) -> Result<Trajectory> {
    let u0 = cfg.initial_field()?;
    let path = WienerPath::sample(seed, split.horizon, split.intervals)?;
    run_splitting(&u0, &SplittingConfig { seed, ..*split }, &path)
}

/// Runs the replicas without writing anything.
pub fn simulate_ensemble(cfg: &RunConfig) -> Result<EnsembleOutcome> {
    cfg.validate()?;
    let u0 = cfg.initial_field()?;
    let split = cfg.splitting_config(&u0)?;
    let base = split.seed;
    let results: Vec<Result<Trajectory>> = with_pool(cfg.threads, || {
        (0..cfg.ensemble_size)
            .into_par_iter()
            .map(|i| single_run(cfg, &split, replica_seed(base, i)))
            .collect()
    })?;
    let mut trajectories = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajectories.push(Some(t)),
            Err(e) => {
                failures.push((i, e));
                trajectories.push(None);
            }
        }
    }
    if failures.len() * 10 > cfg.ensemble_size {
        return Err(SimError::EnsembleFailure {
            failed: failures.len(),
            total: cfg.ensemble_size,
        });
    }
    let records: Vec<Vec<DiagnosticsRecord>> = trajectories
        .iter()
        .flatten()
        .map(|t| t.diagnostics.clone())
        .collect();
    Ok(EnsembleOutcome {
        stats: EnsembleStats::from_records(&records, cfg.decay_tol)?,
        trajectories,
        failures,
    })
}

/// Runs the replicas and writes `path_XXXX.csv` per successful replica and
/// `ensemble.csv` into `cfg.output_dir`.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleOutcome> {
    let out = simulate_ensemble(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    for (i, t) in out.trajectories.iter().enumerate() {
        if let Some(t) = t {
            write_trajectory_csv(&path_csv_name(&cfg.output_dir, i), &t.diagnostics)?;
        }
    }
    write_ensemble_csv(&cfg.output_dir.join("ensemble.csv"), &out.stats)?;
    Ok(out)
}

/// Recomputes the aggregate from the per-path files in `dir`.
pub fn aggregate_from_dir(dir: &Path, decay_tol: f64) -> Result<EnsembleStats> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| SimError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("path_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    let records: Vec<_> = files.iter().map(|p| read_trajectory_csv(p)).collect::<Result<_>>()?;
    EnsembleStats::from_records(&records, decay_tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub epsilon: f64,
    /// Smallest nodal value seen during the run.
    pub min_floor: f64,
    pub decay_rate: Option<f64>,
    pub k_epsilon: f64,
    /// `sqrt(eps) K_eps cum_d2(T)`, the dissipation term of the regularized
    /// decay estimate with unit constant.
    pub correction: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Sup-norm gap over all recorded times between consecutive entries.
    pub gaps: Vec<f64>,
}

/// Runs the base seed's path once per `cfg.epsilon_sweep` value.
pub fn epsilon_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let u0 = cfg.initial_field()?;
    let seed = cfg.splitting.seed;
    let entries: Vec<Result<SweepEntry>> = with_pool(cfg.threads, || {
        cfg.epsilon_sweep
            .par_iter()
            .map(|&eps| {
                let mut c = cfg.clone();
                c.splitting.epsilon = eps;
                let split = c.splitting_config(&u0)?;
                let traj = single_run(&c, &split, seed)?;
                let m = split.mobility()?;
                let bound = sobolev_bound(&traj.snapshots[0]);
                let (k_eps, _) = k_epsilon(eps, m.theta(), bound)?;
                let cum_d2 = traj.diagnostics.last().map_or(0.0, |r| r.cum_d2);
                Ok(SweepEntry {
                    epsilon: eps,
                    min_floor: traj.telemetry.min_u,
                    decay_rate: decay_fit(&traj, 0.1 * split.horizon).ok().map(|f| f.rate),
                    k_epsilon: k_eps,
                    correction: eps.sqrt() * k_eps * cum_d2,
                    trajectory: traj,
                })
            })
            .collect()
    })?;
    let entries: Vec<SweepEntry> = entries.into_iter().collect::<Result<_>>()?;
    let gaps = entries
        .windows(2)
        .map(|w| trajectory_gap(&w[0].trajectory, &w[1].trajectory))
        .collect::<Result<_>>()?;
    Ok(SweepReport { entries, gaps })
}

/// Largest sup-norm difference between two runs recorded at the same times.
pub fn trajectory_gap(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.times != b.times {
        return Err(SimError::InvalidParameter("trajectories recorded at different times".into()));
    }
    Ok(a.snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max))
}
