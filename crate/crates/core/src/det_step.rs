//! Deterministic half-step `v_t = -(f_eps(v) v_xxx)_x` in conservative flux
//! form, advanced by backward Euler with a damped Newton iteration.
//!
//! The discrete system for one step of length `tau` is
//!
//! ```text
//! (w_j - v_j) / tau = -(F_{j+1/2} - F_{j-1/2}) / h,
//! F_{j+1/2} = M_{j+1/2}(w_j, w_{j+1}) * (w_{j+2} - 3 w_{j+1} + 3 w_j - w_{j-1}) / h^3
//! ```
//!
//! Mass is conserved by telescoping. The edge third difference is the forward
//! difference of the compact Laplacian, so the step decreases the compact
//! energy `h/2 sum ((w_{j+1} - w_j)/h)^2` by at least
//! `tau h sum M (D^3 w)^2`. With the entropy-consistent edge mobility
//! `M = [w] / [G_eps'(w)]` the same computation applied to `G_eps` gives the
//! discrete entropy inequality with production `tau h sum (D^2 w)^2`.

use crate::banded::CyclicBanded;
use crate::error::{Result, SimError};
use crate::grid::Field;
use crate::mobility::MobilityModel;

/// Rule for the mobility on the edge between two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    EntropyConsistent,
    Arithmetic,
    Harmonic,
}

impl std::str::FromStr for Averaging {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy_consistent" => Ok(Self::EntropyConsistent),
            "arithmetic" => Ok(Self::Arithmetic),
            "harmonic" => Ok(Self::Harmonic),
            other => Err(SimError::Config(format!("unknown averaging rule '{other}'"))),
        }
    }
}

impl std::fmt::Display for Averaging {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EntropyConsistent => "entropy_consistent",
            Self::Arithmetic => "arithmetic",
            Self::Harmonic => "harmonic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetStepConfig {
    /// Upper bound on the inner step; `f64::INFINITY` lets a single step
    /// cover a whole splitting sub-interval.
    pub dt_internal: f64,
    /// First step tried when no earlier step size is carried over, for
    /// example [`cfl_step_guess`]. `None` starts from the cap.
    pub initial_step: Option<f64>,
    pub averaging: Averaging,
    /// Newton stops once the max-norm residual is below
    /// `newton_tol * max|v|`, or below the rounding floor of the residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative residual accepted from the banded solve before one step of
    /// iterative refinement is attempted.
    pub linear_solver_tol: f64,
}

impl Default for DetStepConfig {
    fn default() -> Self {
        Self {
            dt_internal: f64::INFINITY,
            initial_step: None,
            averaging: Averaging::EntropyConsistent,
            newton_tol: 1e-12,
            newton_max_iter: 30,
            linear_solver_tol: 1e-10,
        }
    }
}

impl DetStepConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(SimError::InvalidParameter(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("dt_internal", self.dt_internal)?;
        if let Some(s) = self.initial_step {
            positive("initial_step", s)?;
        }
        positive("newton_tol", self.newton_tol)?;
        positive("linear_solver_tol", self.linear_solver_tol)?;
        if self.newton_max_iter == 0 {
            return Err(SimError::InvalidParameter("newton_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fourth-order parabolic step heuristic `h^4 / (8 max f_eps(v))`.
pub fn cfl_step_guess(m: &MobilityModel, v: &Field) -> f64 {
    let h = v.grid().spacing();
    let fmax = v
        .values()
        .iter()
        .map(|&s| m.f_unchecked(s.max(0.0)))
        .fold(0.0, f64::max);
    h.powi(4) / (8.0 * fmax.max(f64::MIN_POSITIVE))
}

/// Edge mobility between nodal heights `vl`, `vr`.
///
/// The entropy-consistent value `(vr - vl) / (G_eps'(vr) - G_eps'(vl))`
/// simplifies to `3 a^3 b^3 / (3 a^2 b^2 + eps (a^2 + a b + b^2))`, which is
/// what is evaluated. It needs no special case at `vl = vr`, where it equals
/// `f_eps(vl)`.
pub fn edge_mobility(m: &MobilityModel, vl: f64, vr: f64, rule: Averaging) -> Result<f64> {
    for s in [vl, vr] {
        if !(s > 0.0) {
            return Err(SimError::NonPositiveHeight(s));
        }
    }
    Ok(edge_mobility_grad(m, vl, vr, rule).0)
}

/// `(M, dM/da, dM/db)`; arguments must be positive.
#[inline]
fn edge_mobility_grad(m: &MobilityModel, a: f64, b: f64, rule: Averaging) -> (f64, f64, f64) {
    match rule {
        Averaging::EntropyConsistent => {
            let eps = m.epsilon();
            let (a2, b2) = (a * a, b * b);
            let num = 3.0 * a2 * a * b2 * b;
            let den = 3.0 * a2 * b2 + eps * (a2 + a * b + b2);
            let dnum_a = 9.0 * a2 * b2 * b;
            let dnum_b = 9.0 * a2 * a * b2;
            let dden_a = 6.0 * a * b2 + eps * (2.0 * a + b);
            let dden_b = 6.0 * a2 * b + eps * (2.0 * b + a);
            let d2 = den * den;
            (
                num / den,
                (dnum_a * den - num * dden_a) / d2,
                (dnum_b * den - num * dden_b) / d2,
            )
        }
        Averaging::Arithmetic => (
            0.5 * (m.f_unchecked(a) + m.f_unchecked(b)),
            0.5 * m.f_prime_unchecked(a),
            0.5 * m.f_prime_unchecked(b),
        ),
        Averaging::Harmonic => {
            let (fa, fb) = (m.f_unchecked(a), m.f_unchecked(b));
            let s = fa + fb;
            if s == 0.0 {
                return (0.0, 0.0, 0.0);
            }
            (
                2.0 * fa * fb / s,
                2.0 * m.f_prime_unchecked(a) * fb * fb / (s * s),
                2.0 * m.f_prime_unchecked(b) * fa * fa / (s * s),
            )
        }
    }
}

/// Result of one accepted backward-Euler step.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstepOutcome {
    pub values: Vec<f64>,
    /// `tau h sum M (D^3 w)^2`
    pub dissipation: f64,
    /// `tau h sum (D^2 w)^2`
    pub entropy_production: f64,
    pub newton_iterations: usize,
}

/// The nonlinear algebraic system of one step, on raw periodic samples.
///
/// Works for any `n >= 5`; the grid-level entry points restrict `n` to
/// powers of two.
#[derive(Debug, Clone, Copy)]
pub struct FluxSystem<'a> {
    pub mobility: &'a MobilityModel,
    pub rule: Averaging,
    pub h: f64,
}

#[inline]
fn idx(j: isize, n: usize) -> usize {
    j.rem_euclid(n as isize) as usize
}

impl FluxSystem<'_> {
    #[inline]
    fn third_diff(&self, w: &[f64], e: usize) -> f64 {
        let n = w.len();
        let e = e as isize;
        (w[idx(e + 2, n)] - 3.0 * w[idx(e + 1, n)] + 3.0 * w[idx(e, n)] - w[idx(e - 1, n)])
            / self.h.powi(3)
    }

    /// Edge fluxes `F_{e+1/2}` for `e = 0..n`.
    pub fn fluxes(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len();
        (0..n)
            .map(|e| {
                let m = edge_mobility_grad(self.mobility, w[e], w[(e + 1) % n], self.rule).0;
                m * self.third_diff(w, e)
            })
            .collect()
    }

    /// `R(w) = w - v + tau/h (F_{j+1/2}(w) - F_{j-1/2}(w))`.
    pub fn residual(&self, v: &[f64], w: &[f64], tau: f64) -> Vec<f64> {
        let n = w.len();
        let f = self.fluxes(w);
        let c = tau / self.h;
        (0..n)
            .map(|j| w[j] - v[j] + c * (f[j] - f[(j + n - 1) % n]))
            .collect()
    }

    /// Analytic Jacobian of [`residual`](Self::residual) in cyclic band form.
    pub fn jacobian(&self, w: &[f64], tau: f64) -> Result<CyclicBanded> {
        let n = w.len();
        let mut jac = CyclicBanded::zeros(n, 2)?;
        let c = tau / self.h;
        let h3 = self.h.powi(3);
        // dD3_e / dw at offsets -1, 0, +1, +2 from e
        const D3: [(isize, f64); 4] = [(-1, -1.0), (0, 3.0), (1, -3.0), (2, 1.0)];
        for e in 0..n {
            let (m, dm_a, dm_b) = edge_mobility_grad(self.mobility, w[e], w[(e + 1) % n], self.rule);
            let d3 = self.third_diff(w, e);
            // dF_e / dw_{e+o}
            let mut grad = [0.0; 4];
            for (k, &(_, coef)) in D3.iter().enumerate() {
                grad[k] = m * coef / h3;
            }
            grad[1] += dm_a * d3;
            grad[2] += dm_b * d3;
            // F_e enters row e with +c and row e+1 with -c
            for (k, &(o, _)) in D3.iter().enumerate() {
                jac.add(e, o, c * grad[k]);
                jac.add((e + 1) % n, o - 1, -c * grad[k]);
            }
        }
        for j in 0..n {
            jac.add(j, 0, 1.0);
        }
        Ok(jac)
    }

    /// Discrete dissipation and entropy production of state `w` over `tau`.
    pub fn production(&self, w: &[f64], tau: f64) -> (f64, f64) {
        let n = w.len();
        let mut diss = 0.0;
        let mut d2sum = 0.0;
        for e in 0..n {
            let m = edge_mobility_grad(self.mobility, w[e], w[(e + 1) % n], self.rule).0;
            diss += m * self.third_diff(w, e).powi(2);
            let d2 = (w[(e + 1) % n] - 2.0 * w[e] + w[(e + n - 1) % n]) / (self.h * self.h);
            d2sum += d2 * d2;
        }
        (tau * self.h * diss, tau * self.h * d2sum)
    }
}

/// Damping below which a trial with a larger residual is accepted anyway.
const MIN_DAMPING: f64 = 1.0 / 64.0;

/// Damping below which a trial that leaves the positive cone is an error.
const MIN_POSITIVE_DAMPING: f64 = 1.0 / 1_048_576.0;

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn first_non_positive(w: &[f64]) -> Option<(usize, f64)> {
    w.iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0))
        .map(|(i, &v)| (i, v))
}

/// One backward-Euler step on raw periodic samples with spacing `h`.
pub fn implicit_step(
    v: &[f64],
    h: f64,
    m: &MobilityModel,
    cfg: &DetStepConfig,
    tau: f64,
) -> Result<SubstepOutcome> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SimError::InvalidParameter(format!("step must be > 0, got {tau}")));
    }
    if let Some((_, value)) = first_non_positive(v) {
        return Err(SimError::NonPositiveHeight(value));
    }
    let sys = FluxSystem {
        mobility: m,
        rule: cfg.averaging,
        h,
    };
    let vmax = max_abs(v);
    let mmax = v.iter().map(|&s| m.f_unchecked(s)).fold(0.0, f64::max);
    // size of the terms summed in R; bounds its rounding error
    let floor = 16.0 * f64::EPSILON * vmax * (1.0 + 8.0 * tau * mmax / h.powi(4));
    let tol = (cfg.newton_tol * vmax).max(floor);

    let mut w = v.to_vec();
    let mut r = sys.residual(v, &w, tau);
    let mut rnorm = max_abs(&r);
    let mut iterations = 0;
    while rnorm > tol {
        if iterations == cfg.newton_max_iter {
            return Err(SimError::NewtonDivergence {
                residual: rnorm,
                iterations,
            });
        }
        iterations += 1;
        let jac = sys.jacobian(&w, tau)?;
        let lu = jac.factor()?;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let mut delta = lu.solve(&rhs)?;
        // one round of iterative refinement if the band solve was sloppy
        let lin_res: Vec<f64> = jac.matvec(&delta).iter().zip(&rhs).map(|(a, b)| b - a).collect();
        if max_abs(&lin_res) > cfg.linear_solver_tol * max_abs(&rhs).max(f64::MIN_POSITIVE) {
            let corr = lu.solve(&lin_res)?;
            for (d, c) in delta.iter_mut().zip(&corr) {
                *d += c;
            }
            let lin_res: Vec<f64> =
                jac.matvec(&delta).iter().zip(&rhs).map(|(a, b)| b - a).collect();
            if max_abs(&lin_res) > cfg.linear_solver_tol * max_abs(&rhs) {
                return Err(SimError::LinearSolveFailure(format!(
                    "relative linear residual {:e} after refinement",
                    max_abs(&lin_res) / max_abs(&rhs)
                )));
            }
        }

        // damped update: halve while the trial point leaves the positive
        // cone or the residual grows
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            if let Some((index, value)) = first_non_positive(&trial) {
                if lambda < MIN_POSITIVE_DAMPING {
                    return Err(SimError::PositivityLoss { index, value });
                }
                lambda *= 0.5;
                continue;
            }
            let r_trial = sys.residual(v, &trial, tau);
            let n_trial = max_abs(&r_trial);
            if n_trial <= rnorm || lambda < MIN_DAMPING || !n_trial.is_finite() {
                if !n_trial.is_finite() {
                    return Err(SimError::NewtonDivergence {
                        residual: n_trial,
                        iterations,
                    });
                }
                let stalled = max_abs(&delta) * lambda <= 4.0 * f64::EPSILON * max_abs(&trial);
                w = trial;
                r = r_trial;
                rnorm = n_trial;
                if stalled && rnorm <= 1e3 * tol {
                    rnorm = 0.0;
                }
                break;
            }
            lambda *= 0.5;
        }
    }

    let (dissipation, entropy_production) = sys.production(&w, tau);
    Ok(SubstepOutcome {
        values: w,
        dissipation,
        entropy_production,
        newton_iterations: iterations,
    })
}

/// One backward-Euler step of the grid field; returns the new field, the
/// discrete dissipation and the discrete entropy production.
pub fn deterministic_substep(
    v: &Field,
    m: &MobilityModel,
    cfg: &DetStepConfig,
    tau: f64,
) -> Result<(Field, f64, f64)> {
    let out = implicit_step(v.values(), v.grid().spacing(), m, cfg, tau)?;
    Ok((
        Field::from_vec_unchecked(*v.grid(), out.values),
        out.dissipation,
        out.entropy_production,
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DetTelemetry {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub newton_iterations: usize,
    pub dissipation: f64,
    pub entropy_production: f64,
    /// Step size the controller would try next.
    pub next_tau: f64,
    /// Smallest nodal value over all accepted states.
    pub min_value: f64,
}

const GROWTH: f64 = 1.2;
const ACCEPTS_BEFORE_GROWTH: usize = 5;

/// Advances `v` by `duration` with adaptive backward-Euler steps.
pub fn run_deterministic(
    v: &Field,
    m: &MobilityModel,
    cfg: &DetStepConfig,
    duration: f64,
) -> Result<(Field, DetTelemetry)> {
    run_deterministic_from(v, m, cfg, duration, None)
}

/// Like [`run_deterministic`] with a starting step size, so that a caller
/// running many consecutive intervals can carry the controller state over.
/// Without a hint the first step is `cfg.initial_step`, or failing that
/// `min(dt_internal, duration)`.
pub fn run_deterministic_from(
    v: &Field,
    m: &MobilityModel,
    cfg: &DetStepConfig,
    duration: f64,
    tau_hint: Option<f64>,
) -> Result<(Field, DetTelemetry)> {
    cfg.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimError::InvalidParameter(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    let h = v.grid().spacing();
    let hint = tau_hint.or(cfg.initial_step);
    let (state, tele) = control(v.values(), duration, cfg.dt_internal, hint, |s, tau| {
        implicit_step(s, h, m, cfg, tau)
    })?;
    Ok((Field::from_vec_unchecked(*v.grid(), state), tele))
}

/// Adaptive step-size loop around `step`. Rejections are the recoverable
/// step failures; any other error is passed through.
fn control(
    start: &[f64],
    duration: f64,
    cap: f64,
    tau_hint: Option<f64>,
    mut step: impl FnMut(&[f64], f64) -> Result<SubstepOutcome>,
) -> Result<(Vec<f64>, DetTelemetry)> {
    let mut state = start.to_vec();
    let mut tele = DetTelemetry {
        min_value: start.iter().copied().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    let mut tau_nominal = tau_hint.unwrap_or(f64::INFINITY).min(cap).min(duration);
    let mut t = 0.0;
    let mut streak = 0;
    let end_tol = 1e-12 * duration;
    while duration - t > end_tol {
        let tau = tau_nominal.min(duration - t);
        match step(&state, tau) {
            Ok(out) => {
                t += tau;
                tele.accepted_steps += 1;
                tele.newton_iterations += out.newton_iterations;
                tele.dissipation += out.dissipation;
                tele.entropy_production += out.entropy_production;
                state = out.values;
                tele.min_value = state.iter().copied().fold(tele.min_value, f64::min);
                streak += 1;
                if streak >= ACCEPTS_BEFORE_GROWTH {
                    tau_nominal = (tau_nominal * GROWTH).min(cap);
                    streak = 0;
                }
            }
            Err(
                SimError::PositivityLoss { .. }
                | SimError::NewtonDivergence { .. }
                | SimError::LinearSolveFailure(_),
            ) => {
                tele.rejected_steps += 1;
                streak = 0;
                tau_nominal = 0.5 * tau;
                if tau_nominal < duration * 1e-12 {
                    return Err(SimError::StepCollapse { tau: tau_nominal, t });
                }
            }
            Err(e) => return Err(e),
        }
    }
    tele.next_tau = tau_nominal;
    Ok((state, tele))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{energy_compact, energy_j};
    use crate::grid::{integrate, TorusGrid};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn model(eps: f64) -> MobilityModel {
        MobilityModel::with_epsilon(eps).unwrap()
    }

    fn bump(n: usize) -> Field {
        let g = TorusGrid::new(1.0, n).unwrap();
        Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x).sin())
    }

    #[test]
    fn config_validation() {
        assert!(DetStepConfig::default().validate().is_ok());
        let bad = DetStepConfig {
            dt_internal: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetStepConfig {
            newton_max_iter: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("harmonic".parse::<Averaging>().unwrap(), Averaging::Harmonic);
        assert!("geometric".parse::<Averaging>().is_err());
    }

    #[test]
    fn edge_mobility_consistency() {
        let m = model(0.03);
        for rule in [Averaging::EntropyConsistent, Averaging::Arithmetic, Averaging::Harmonic] {
            let c = 0.73;
            let e = edge_mobility(&m, c, c, rule).unwrap();
            assert!((e - m.f_eps(c).unwrap()).abs() < 1e-15);
        }
        assert!(edge_mobility(&m, 0.0, 1.0, Averaging::Arithmetic).is_err());
    }

    #[test]
    fn entropy_consistent_matches_difference_quotient() {
        let m = model(0.05);
        for (a, b) in [(0.3, 0.9), (1.2, 0.4), (0.05, 2.0)] {
            let gp = |s: f64| m.entropy_g_prime(s).unwrap();
            let quotient = (b - a) / (gp(b) - gp(a));
            let closed = edge_mobility(&m, a, b, Averaging::EntropyConsistent).unwrap();
            assert!((quotient - closed).abs() < 1e-13 * closed);
        }
    }

    proptest! {
        #[test]
        fn edge_mobility_lies_between_endpoint_values(a in 0.01f64..3.0, b in 0.01f64..3.0, eps in 1e-4f64..1.0) {
            let m = model(eps);
            let (fa, fb) = (m.f_eps(a).unwrap(), m.f_eps(b).unwrap());
            let (lo, hi) = (fa.min(fb), fa.max(fb));
            for rule in [Averaging::EntropyConsistent, Averaging::Arithmetic, Averaging::Harmonic] {
                let e = edge_mobility(&m, a, b, rule).unwrap();
                prop_assert!(e >= lo * (1.0 - 1e-12) && e <= hi * (1.0 + 1e-12), "{rule}: {e} not in [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn rough_state_converges_through_deep_damping() {
        // full Newton steps from this state leave the positive cone for
        // several iterations before the positive root is reached
        let v = [
            1.4069312662869793, 0.9915211263537289, 1.5830896002315655, 1.1825242792317086,
            1.6686908885098488, 0.37951033484857644, 1.1648702267201834, 1.127132316795394,
            1.6026302099648482, 0.505308255574769, 1.5938799319890253, 1.2634199345767203,
        ];
        let cfg = DetStepConfig {
            newton_max_iter: 100,
            ..Default::default()
        };
        let out = implicit_step(&v, 1.0 / 12.0, &model(1e-2), &cfg, 1e-5).unwrap();
        assert!(out.values.iter().all(|&x| x > 0.5));
        let (before, after): (f64, f64) = (v.iter().sum(), out.values.iter().sum());
        assert!((before - after).abs() < 1e-13 * before);
        assert!(out.dissipation > 0.0);
    }

    #[test]
    fn arithmetic_rule_is_monotone() {
        let m = model(0.1);
        let base = edge_mobility(&m, 0.5, 0.8, Averaging::Arithmetic).unwrap();
        assert!(edge_mobility(&m, 0.6, 0.8, Averaging::Arithmetic).unwrap() > base);
        assert!(edge_mobility(&m, 0.5, 0.9, Averaging::Arithmetic).unwrap() > base);
    }

    #[test]
    fn mobility_gradients_match_finite_differences() {
        let m = model(0.02);
        let d = 1e-6;
        for rule in [Averaging::EntropyConsistent, Averaging::Arithmetic, Averaging::Harmonic] {
            let (a, b) = (0.45, 1.3);
            let (_, ga, gb) = edge_mobility_grad(&m, a, b, rule);
            let fa = (edge_mobility_grad(&m, a + d, b, rule).0 - edge_mobility_grad(&m, a - d, b, rule).0) / (2.0 * d);
            let fb = (edge_mobility_grad(&m, a, b + d, rule).0 - edge_mobility_grad(&m, a, b - d, rule).0) / (2.0 * d);
            assert!((ga - fa).abs() < 1e-7, "{rule}");
            assert!((gb - fb).abs() < 1e-7, "{rule}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = model(0.01);
        let sys = FluxSystem {
            mobility: &m,
            rule: Averaging::EntropyConsistent,
            h: 0.1,
        };
        let n = 10;
        let v: Vec<f64> = (0..n).map(|j| 1.0 + 0.3 * (j as f64 * 0.9).sin()).collect();
        let w: Vec<f64> = v.iter().enumerate().map(|(j, x)| x + 0.01 * (j as f64).cos()).collect();
        let tau = 1e-4;
        let jac = sys.jacobian(&w, tau).unwrap().to_dense();
        let d = 1e-7;
        for k in 0..n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[k] += d;
            wm[k] -= d;
            let rp = sys.residual(&v, &wp, tau);
            let rm = sys.residual(&v, &wm, tau);
            for j in 0..n {
                let fd = (rp[j] - rm[j]) / (2.0 * d);
                assert!((jac[j][k] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "({j},{k}) {} vs {fd}", jac[j][k]);
            }
        }
    }

    #[test]
    fn constant_state_is_fixed() {
        let g = TorusGrid::new(1.0, 32).unwrap();
        let v = Field::constant(g, 0.6);
        let (w, diss, prod) = deterministic_substep(&v, &model(0.01), &DetStepConfig::default(), 1e-3).unwrap();
        assert_eq!(w, v);
        // the third difference of a constant is zero up to rounding / h^3
        assert!(diss < 1e-20);
        assert_eq!(prod, 0.0);
    }

    #[test]
    fn single_step_conserves_mass_and_dissipates() {
        let v = bump(64);
        let m = model(1e-2);
        let cfg = DetStepConfig::default();
        let (w, diss, prod) = deterministic_substep(&v, &m, &cfg, 1e-5).unwrap();
        assert!((integrate(&w) - integrate(&v)).abs() < 1e-12 * integrate(&v));
        assert!(energy_j(&w) < energy_j(&v));
        assert!(diss > 0.0 && prod > 0.0);
        // compact-energy inequality holds with the reported dissipation
        assert!(energy_compact(&w) + diss <= energy_compact(&v) + 1e-10);
        // entropy inequality with the reported production
        let g0 = m.entropy_functional(&v).unwrap();
        let g1 = m.entropy_functional(&w).unwrap();
        assert!(g1 + prod <= g0 + 1e-12 * g0.abs().max(1.0));
    }

    #[test]
    fn non_positive_input_is_rejected() {
        let g = TorusGrid::new(1.0, 16).unwrap();
        let mut vals = vec![1.0; 16];
        vals[2] = 0.0;
        let v = Field::new(g, vals).unwrap();
        let r = deterministic_substep(&v, &model(0.01), &DetStepConfig::default(), 1e-5);
        assert!(matches!(r, Err(SimError::NonPositiveHeight(_))));
    }

    #[test]
    fn positivity_loss_forces_rejection_and_recovery() {
        // a deep narrow well: one huge step overshoots below zero
        let g = TorusGrid::new(1.0, 64).unwrap();
        let v = Field::from_fn(g, |x| 0.02 + (-(x - 0.5f64).powi(2) / 0.002).exp());
        let m = model(1e-3);
        let cfg = DetStepConfig::default();
        let (w, tele) = run_deterministic(&v, &m, &cfg, 1e-3).unwrap();
        assert!(w.min() > 0.0);
        assert!(tele.min_value > 0.0);
        assert!(tele.accepted_steps >= 1);
        assert!((integrate(&w) - integrate(&v)).abs() < 1e-11 * integrate(&v));
    }

    #[test]
    fn run_deterministic_invariants() {
        let v = bump(64);
        let m = model(1e-2);
        let cfg = DetStepConfig {
            dt_internal: 2e-5,
            ..Default::default()
        };
        let (w, tele) = run_deterministic(&v, &m, &cfg, 1e-3).unwrap();
        assert!((integrate(&w) - integrate(&v)).abs() < 1e-11 * integrate(&v));
        assert!(energy_j(&w) <= energy_j(&v));
        assert!(energy_compact(&w) + tele.dissipation <= energy_compact(&v) + 1e-10);
        let g0 = m.entropy_functional(&v).unwrap();
        let g1 = m.entropy_functional(&w).unwrap();
        assert!(g1 + tele.entropy_production <= g0 + 1e-8 * g0.abs());
        assert!(tele.accepted_steps >= 50);
        assert!(tele.next_tau <= 2e-5);
    }

    fn identity_step(s: &[f64], _tau: f64) -> Result<SubstepOutcome> {
        Ok(SubstepOutcome {
            values: s.to_vec(),
            dissipation: 0.0,
            entropy_production: 0.0,
            newton_iterations: 1,
        })
    }

    #[test]
    fn step_collapse_is_reported() {
        let r = control(&[1.0; 4], 1.0, f64::INFINITY, None, |_, _| {
            Err(SimError::PositivityLoss { index: 0, value: -1.0 })
        });
        match r {
            Err(SimError::StepCollapse { tau, t }) => {
                assert!(tau < 1e-12);
                assert_eq!(t, 0.0);
            }
            other => panic!("{other:?}"),
        }
        // errors that halving cannot fix are passed through
        let r = control(&[1.0; 4], 1.0, f64::INFINITY, None, |_, _| {
            Err(SimError::InvalidParameter("x".into()))
        });
        assert!(matches!(r, Err(SimError::InvalidParameter(_))));
    }

    #[test]
    fn controller_halves_grows_and_lands_on_the_end() {
        let mut taus = Vec::new();
        let (_, tele) = control(&[1.0; 4], 1.0, 0.3, None, |s, tau| {
            taus.push(tau);
            if tau > 0.1 {
                Err(SimError::NewtonDivergence { residual: 1.0, iterations: 3 })
            } else {
                identity_step(s, tau)
            }
        })
        .unwrap();
        assert_eq!(taus[0], 0.3);
        assert_eq!(taus[1], 0.15);
        assert_eq!(taus[2], 0.075);
        assert!(tele.rejected_steps >= 2);
        // after five accepts the step grows by 1.2
        assert!((taus[7] - 0.09).abs() < 1e-15);
        let total: f64 = taus
            .iter()
            .filter(|&&t| t <= 0.1)
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        // a step truncated to reach the end does not shrink the nominal step
        let (_, tele) = control(&[1.0; 4], 1.0, 0.4, None, identity_step).unwrap();
        assert_eq!(tele.accepted_steps, 3);
        assert_eq!(tele.next_tau, 0.4);
        let (_, tele) = control(&[1.0; 4], 1.0, f64::INFINITY, Some(0.25), identity_step).unwrap();
        assert_eq!(tele.accepted_steps, 4);
    }

    #[test]
    fn cfl_guess_scales_like_h4() {
        let m = model(0.01);
        let a = cfl_step_guess(&m, &bump(32));
        let b = cfl_step_guess(&m, &bump(64));
        assert!((a / b - 16.0).abs() < 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn entropy_rule_satisfies_discrete_entropy_inequality(
            vals in prop::collection::vec(0.2f64..2.0, 16),
            log_tau in -8.0f64..-4.0,
            eps in 1e-3f64..0.5,
        ) {
            let g = TorusGrid::new(1.0, 16).unwrap();
            let v = Field::new(g, vals).unwrap();
            let m = model(eps);
            let tau = 10f64.powf(log_tau);
            if let Ok((w, diss, prod)) = deterministic_substep(&v, &m, &DetStepConfig::default(), tau) {
                let g0 = m.entropy_functional(&v).unwrap();
                let g1 = m.entropy_functional(&w).unwrap();
                prop_assert!(g1 + prod <= g0 + 1e-10 * (1.0 + g0.abs()));
                let e0 = energy_compact(&v);
                prop_assert!(energy_compact(&w) + diss <= e0 + 1e-10 * (1.0 + e0));
                prop_assert!((integrate(&w) - integrate(&v)).abs() <= 1e-12 * integrate(&v));
            }
        }
    }
}
