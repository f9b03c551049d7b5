//! Scalar functionals recorded along a run, the decay-rate fit, and a few
//! estimators used by the long-time checks.

use std::f64::consts::PI;

use crate::error::{Result, SimError};
use crate::grid::{dx, dxx, integrate, l2_norm, Field, TorusGrid};
use crate::mobility::MobilityModel;
use crate::spectral;
use crate::splitting::Trajectory;
use crate::stats::linear_fit;

/// Energies at or below this are treated as numerically zero by the fit.
pub const ENERGY_FLOOR: f64 = 1e-30;
const MIN_FIT_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy_j: f64,
    pub entropy: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub sup_dev: f64,
    pub cum_dissipation: f64,
    pub cum_d2: f64,
}

impl DiagnosticsRecord {
    /// Evaluates every functional of `u`; the cumulative terms are supplied
    /// by the caller.
    pub fn measure(
        t: f64,
        u: &Field,
        m: &MobilityModel,
        ref_mean: f64,
        cum_dissipation: f64,
        cum_d2: f64,
    ) -> Result<Self> {
        Ok(Self {
            t,
            mass: integrate(u),
            energy_j: energy_j(u),
            entropy: m.entropy_functional(u)?,
            min_u: u.min(),
            max_u: u.max(),
            sup_dev: sup_deviation(u, ref_mean),
            cum_dissipation,
            cum_d2,
        })
    }
}

/// `J[u] = 1/2 ||dx u||^2` with the central difference.
pub fn energy_j(u: &Field) -> f64 {
    0.5 * l2_norm(&dx(u)).powi(2)
}

/// Energy built on the forward difference, `h/2 sum ((u_{j+1} - u_j)/h)^2`.
///
/// This is the functional the implicit step provably decreases. Unlike
/// [`energy_j`] it vanishes only on constants, so it supports the
/// sup-norm bound of [`sobolev_constant`].
pub fn energy_compact(u: &Field) -> f64 {
    let v = u.values();
    let n = v.len();
    let h = u.grid().spacing();
    0.5 * h * (0..n).map(|j| ((v[(j + 1) % n] - v[j]) / h).powi(2)).sum::<f64>()
}

/// Same quantity as [`energy_j`], evaluated from Fourier coefficients.
pub fn energy_j_spectral(u: &Field) -> f64 {
    let n = u.len();
    let h = u.grid().spacing();
    let c = spectral::forward(u.values());
    // central difference multiplier: i sin(2 pi k / n) / h; Parseval: h/n sum |.|^2
    let s: f64 = c
        .iter()
        .enumerate()
        .map(|(k, z)| (2.0 * PI * k as f64 / n as f64).sin().powi(2) * z.norm_sqr())
        .sum();
    0.5 * s / (h * n as f64)
}

/// `max_j |u_j - ref_mean|`
pub fn sup_deviation(u: &Field, ref_mean: f64) -> f64 {
    u.values().iter().fold(0.0, |m, v| m.max((v - ref_mean).abs()))
}

/// Sharp constant `C` in `max_j |u_j - mean(u)|^2 <= C * 2 * energy_compact(u)`.
///
/// By Cauchy-Schwarz in Fourier space the optimum is
/// `C = (1/L) sum_{k != 0} 1/mu_k` with `mu_k = 4 sin^2(pi k / n) / h^2`.
/// It tends to `L/12` under refinement.
pub fn sobolev_constant(grid: &TorusGrid) -> f64 {
    let n = grid.points();
    let h = grid.spacing();
    let s: f64 = (1..n)
        .map(|k| h * h / (4.0 * (PI * k as f64 / n as f64).sin().powi(2)))
        .sum();
    s / grid.length()
}

/// Upper bound `mean(u) + sqrt(2 C energy_compact(u))` on `max u` for every
/// state with the same mass and no larger compact energy.
pub fn sobolev_bound(u: &Field) -> f64 {
    crate::grid::mean(u) + (2.0 * sobolev_constant(u.grid()) * energy_compact(u)).sqrt()
}

/// Decay coefficient `K_eps` of the regularized energy estimate and its
/// `eps -> 0` limit, returned as `(k_eps, k_limit)`.
pub fn k_epsilon(epsilon: f64, theta: f64, k_bound: f64) -> Result<(f64, f64)> {
    if !(k_bound > 0.0 && k_bound.is_finite()) {
        return Err(SimError::InvalidBound(k_bound));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SimError::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let pre = PI * PI / (16.0 * (PI + 1.0).powi(2));
    let lift = 1.0 + 2.0 * epsilon.powf(theta);
    let k_eps = pre * lift * lift / (epsilon + k_bound * k_bound).sqrt();
    Ok((k_eps, pre / k_bound))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `ln J` against `t` over the records with
/// `t >= t_start`.
pub fn decay_fit(traj: &Trajectory, t_start: f64) -> Result<DecayFit> {
    let t: Vec<f64> = traj.diagnostics.iter().map(|r| r.t).collect();
    let e: Vec<f64> = traj.diagnostics.iter().map(|r| r.energy_j).collect();
    decay_fit_series(&t, &e, t_start)
}

/// [`decay_fit`] on raw `(t, J)` columns.
///
/// The window stops at the first energy below [`ENERGY_FLOOR`]. Fewer than
/// ten usable points is an error, reported as `EnergyUnderflow` when the
/// floor was what cut the window short.
pub fn decay_fit_series(times: &[f64], energies: &[f64], t_start: f64) -> Result<DecayFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut underflow = None;
    for (&t, &e) in times.iter().zip(energies) {
        if t < t_start {
            continue;
        }
        if !(e > ENERGY_FLOOR) {
            underflow = Some(t);
            break;
        }
        xs.push(t);
        ys.push(e.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(match underflow {
            Some(t) => SimError::EnergyUnderflow { t },
            None => SimError::InsufficientData(format!(
                "{} records with t >= {t_start}, need {MIN_FIT_POINTS}",
                xs.len()
            )),
        });
    }
    let fit = linear_fit(&xs, &ys);
    Ok(DecayFit {
        rate: -fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        points: xs.len(),
    })
}

/// Ratios probing the two functional inequalities used for the decay
/// estimate:
///
/// * `r45 = int u^b (D^2 u)^2 / ((1 - b)^2 int u^(b-2) (D u)^4)`
/// * `r46 = int u^2 (D^2 u)^2 / ((int u)^2 int (D u)^2)`
///
/// A ratio is `+inf` when its denominator is below `1e-30` (or `b == 1`).
pub fn lemma_ratio_estimates(u: &Field, beta: f64) -> Result<(f64, f64)> {
    if let Some(&bad) = u.values().iter().find(|v| !(**v > 0.0)) {
        return Err(SimError::NonPositiveHeight(bad));
    }
    let d1 = dx(u);
    let d2 = dxx(u);
    let grid = *u.grid();
    let weighted = |w: &dyn Fn(f64, f64, f64) -> f64| {
        let vals: Vec<f64> = (0..u.len())
            .map(|j| w(u.values()[j], d1.values()[j], d2.values()[j]))
            .collect();
        integrate(&Field::from_vec_unchecked(grid, vals))
    };
    let ratio = |num: f64, den: f64| if den < 1e-30 { f64::INFINITY } else { num / den };

    let r45 = if beta == 1.0 {
        f64::INFINITY
    } else {
        let num = weighted(&|s, _, b| s.powf(beta) * b * b);
        let den = (1.0 - beta).powi(2) * weighted(&|s, a, _| s.powf(beta - 2.0) * a.powi(4));
        ratio(num, den)
    };
    let num = weighted(&|s, _, b| s * s * b * b);
    let den = integrate(u).powi(2) * weighted(&|_, a, _| a * a);
    Ok((r45, ratio(num, den)))
}

/// Mass, energy and entropy recomputed from a stored state by routes
/// independent of the online bookkeeping: compensated summation for the
/// mass, Fourier coefficients for the energy, and a direct pointwise
/// evaluation of the entropy density.
pub fn offline_functionals(u: &Field, m: &MobilityModel) -> Result<(f64, f64, f64)> {
    let h = u.grid().spacing();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in u.values() {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let eps = m.epsilon();
    let mut entropy = 0.0;
    for &s in u.values() {
        if !(s > 0.0) {
            return Err(SimError::NonPositiveHeight(s));
        }
        entropy += eps / (6.0 * s * s) - s.ln();
    }
    Ok((h * sum, energy_j_spectral(u), h * entropy))
}
