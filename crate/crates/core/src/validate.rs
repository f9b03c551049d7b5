//! Quick invariant suite behind the `validate` subcommand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diagnostics::{offline_functionals, sobolev_bound};
use crate::error::Result;
use crate::grid::{l2_norm, mean, Field, TorusGrid};
use crate::splitting::{run_splitting, SplittingConfig};
use crate::stoch_step::{spectral_dx, stochastic_shift, ShiftMethod};
use crate::wiener::{derive_seed, WienerPath};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Runs a short simulation on a 32-point grid with the configured epsilon,
/// averaging and seed, and checks the conservation, dissipation and
/// positivity properties of the scheme.
pub fn run_validation(cfg: &RunConfig) -> Result<Vec<Check>> {
    let grid = TorusGrid::new(1.0, 32)?;
    let u0 = Field::from_fn(grid, |x| 1.0 + 0.3 * (2.0 * PI * x).sin());
    let split = SplittingConfig {
        horizon: 1e-3,
        intervals: 32,
        record_every: 1,
        ..cfg.splitting
    };
    let path = WienerPath::sample(split.seed, split.horizon, split.intervals)?;
    let traj = run_splitting(&u0, &split, &path)?;
    let m = split.mobility()?;
    let recs = &traj.diagnostics;
    let first = recs[0];
    let mut out = Vec::new();

    let drift = recs
        .iter()
        .map(|r| ((r.mass - first.mass) / first.mass).abs())
        .fold(0.0, f64::max);
    out.push(check("mass conservation", drift < 1e-11, format!("max relative drift {drift:.2e}")));

    let rise = recs
        .windows(2)
        .map(|w| w[1].energy_j - w[0].energy_j)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(check(
        "energy non-increasing",
        rise <= 1e-10 * first.energy_j,
        format!("largest step change {rise:.2e}"),
    ));

    let excess = recs
        .iter()
        .map(|r| r.entropy + r.cum_d2 - first.entropy)
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(check(
        "entropy control",
        excess <= 1e-6 * first.entropy.abs(),
        format!("max of entropy + cum_d2 - initial {excess:.2e}"),
    ));

    let floor = traj.telemetry.min_u;
    out.push(check("positivity", floor > 0.0, format!("minimum height {floor:.4e}")));

    let bound = sobolev_bound(&traj.snapshots[0]);
    let top = recs.iter().map(|r| r.max_u).fold(0.0, f64::max);
    out.push(check("uniform upper bound", top <= bound, format!("max {top:.6} <= bound {bound:.6}")));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split.seed, &[0xC0FFEE]));
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let coeffs: Vec<(f64, f64)> = (0..15).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let w = Field::from_fn(grid, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| a * (2.0 * PI * k as f64 * x).cos() + b * (2.0 * PI * k as f64 * x).sin())
                .sum()
        });
        let s = stochastic_shift(&w, rng.random_range(-3.0..3.0), ShiftMethod::Spectral)?;
        let rel = |a: f64, b: f64| (a - b).abs() / a.max(1e-300);
        worst = worst
            .max(rel(l2_norm(&w), l2_norm(&s)))
            .max(rel(l2_norm(&spectral_dx(&w)), l2_norm(&spectral_dx(&s))))
            .max((mean(&w) - mean(&s)).abs());
    }
    out.push(check("shift isometry", worst < 1e-12, format!("worst deviation {worst:.2e}")));

    let mut mismatch: f64 = 0.0;
    for (r, u) in recs.iter().zip(&traj.snapshots) {
        let (mass, j, ent) = offline_functionals(u, &m)?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        mismatch = mismatch.max(rel(mass, r.mass)).max(rel(ent, r.entropy));
        if r.energy_j > 1e-20 {
            mismatch = mismatch.max(rel(j, r.energy_j));
        }
    }
    out.push(check("offline recomputation", mismatch < 1e-10, format!("max relative mismatch {mismatch:.2e}")));

    let again = run_splitting(&u0, &split, &path)?;
    out.push(check("reproducibility", again == traj, "identical rerun".into()));

    let fine = path.refine();
    let kept = path
        .times()
        .iter()
        .zip(path.values())
        .enumerate()
        .all(|(k, (t, b))| fine.times()[2 * k] == *t && fine.values()[2 * k] == *b);
    out.push(check("bridge refinement keeps knots", kept, format!("{} knots", path.times().len())));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass() {
        let checks = run_validation(&RunConfig::default()).unwrap();
        assert_eq!(checks.len(), 9);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
