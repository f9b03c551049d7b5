//! Lie-Trotter splitting of the regularized stochastic equation.
//!
//! `[0, T]` is cut into `N+1` intervals of length `delta`. On each interval
//! the deterministic flow runs for `delta`, then the state is translated by
//! the path increment over the interval. The deterministic output is
//! labelled `(j - 1/2) delta` and the translated state `j delta`.

use crate::det_step::{run_deterministic_from, DetStepConfig};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Result, SimError};
use crate::grid::{mean, Field};
use crate::mobility::{MobilityModel, DEFAULT_THETA};
use crate::stoch_step::{stochastic_shift, ShiftMethod};
use crate::wiener::WienerPath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplittingConfig {
    pub horizon: f64,
    /// Number of splitting intervals, `N + 1`.
    pub intervals: usize,
    pub epsilon: f64,
    pub theta: f64,
    /// Record every this many intervals; the last interval is always recorded.
    pub record_every: usize,
    pub seed: u64,
    pub shift_method: ShiftMethod,
    pub det: DetStepConfig,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            intervals: 64,
            epsilon: 1e-2,
            theta: DEFAULT_THETA,
            record_every: 1,
            seed: 0,
            shift_method: ShiftMethod::Spectral,
            det: DetStepConfig::default(),
        }
    }
}

impl SplittingConfig {
    pub fn delta(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn mobility(&self) -> Result<MobilityModel> {
        MobilityModel::new(self.epsilon, self.theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::InvalidHorizon(format!("horizon {}", self.horizon)));
        }
        if self.intervals == 0 {
            return Err(SimError::InvalidParameter("intervals must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::InvalidParameter("record_every must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "the lifted scheme needs epsilon > 0, got {}",
                self.epsilon
            )));
        }
        self.mobility()?;
        self.det.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplitTelemetry {
    pub newton_iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub cubic_fallbacks: usize,
    /// Step size the deterministic controller will try next.
    pub next_tau: f64,
    /// Smallest nodal value over every accepted state, recorded or not.
    pub min_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SplittingConfig,
    /// Mean of the lifted initial state; `sup_dev` is measured against it.
    pub ref_mean: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub telemetry: SplitTelemetry,
    pub final_state: Field,
    pub final_time: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Snapshot recorded at time `t`, if any.
    pub fn snapshot_at(&self, t: f64) -> Option<&Field> {
        let tol = 1e-9 * self.config.delta();
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .map(|i| &self.snapshots[i])
    }
}

/// Runs the splitting scheme from `u0` (lifted first) along `path`, whose
/// knots must include every `j * delta`.
pub fn run_splitting(u0: &Field, cfg: &SplittingConfig, path: &WienerPath) -> Result<Trajectory> {
    cfg.validate()?;
    check_horizon(path, cfg.horizon)?;
    let m = cfg.mobility()?;
    let u = m.lift_initial(u0)?;
    let ref_mean = mean(&u);
    let first = DiagnosticsRecord::measure(0.0, &u, &m, ref_mean, 0.0, 0.0)?;
    let mut traj = Trajectory {
        config: *cfg,
        ref_mean,
        times: vec![0.0],
        snapshots: vec![u.clone()],
        diagnostics: vec![first],
        telemetry: SplitTelemetry {
            min_u: u.min(),
            next_tau: f64::INFINITY,
            ..Default::default()
        },
        final_state: u,
        final_time: 0.0,
    };
    advance(&mut traj, &m, cfg, path, cfg.intervals)?;
    Ok(traj)
}

/// Extends a finished run by `extra_t` along an independent path segment on
/// `[0, extra_t]`; the number of new intervals is the segment's step count.
/// The state is not lifted again.
pub fn continue_run(traj: &Trajectory, extra_t: f64, path_extension: &WienerPath) -> Result<Trajectory> {
    if traj.is_empty() {
        return Err(SimError::InvalidParameter("cannot continue an empty trajectory".into()));
    }
    if extra_t == 0.0 {
        return Ok(traj.clone());
    }
    check_horizon(path_extension, extra_t)?;
    let mut cfg = traj.config;
    let m = cfg.mobility()?;
    cfg.horizon = extra_t;
    cfg.intervals = path_extension.steps();
    cfg.validate()?;
    let mut out = traj.clone();
    advance(&mut out, &m, &cfg, path_extension, cfg.intervals)?;
    // the stored config describes the whole run
    out.config.horizon = traj.config.horizon + extra_t;
    out.config.intervals = traj.config.intervals + cfg.intervals;
    Ok(out)
}

fn check_horizon(path: &WienerPath, horizon: f64) -> Result<()> {
    if (path.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(SimError::PathGridMismatch(format!(
            "path horizon {} differs from run horizon {horizon}",
            path.horizon()
        )));
    }
    Ok(())
}

/// Runs `intervals` splitting intervals of `cfg.delta()` from the final
/// state of `traj`, appending records. Path times are relative to the start.
fn advance(
    traj: &mut Trajectory,
    m: &MobilityModel,
    cfg: &SplittingConfig,
    path: &WienerPath,
    intervals: usize,
) -> Result<()> {
    let delta = cfg.delta();
    let t0 = traj.final_time;
    let last = traj.diagnostics.last().copied().expect("trajectory has a record");
    let (mut cum_diss, mut cum_d2) = (last.cum_dissipation, last.cum_d2);
    let mut state = traj.final_state.clone();
    let tele = &mut traj.telemetry;
    let hint = tele.next_tau.is_finite().then_some(tele.next_tau);
    let mut hint = hint;
    let knot = |j: usize| cfg.horizon * j as f64 / intervals as f64;

    for j in 1..=intervals {
        let (v, dt) = run_deterministic_from(&state, m, &cfg.det, delta, hint)?;
        hint = Some(dt.next_tau);
        tele.newton_iterations += dt.newton_iterations;
        tele.accepted_steps += dt.accepted_steps;
        tele.rejected_steps += dt.rejected_steps;
        tele.next_tau = dt.next_tau;
        tele.min_u = tele.min_u.min(dt.min_value);
        cum_diss += dt.dissipation;
        cum_d2 += dt.entropy_production;

        let db = path
            .increment(knot(j - 1), knot(j))
            .map_err(|e| match e {
                SimError::NotAKnot(t) => {
                    SimError::PathGridMismatch(format!("path has no knot at t = {t}"))
                }
                other => other,
            })?;
        let mut w = stochastic_shift(&v, db, cfg.shift_method)?;
        if !(w.min() > 0.0) && cfg.shift_method == ShiftMethod::Spectral {
            tele.cubic_fallbacks += 1;
            w = stochastic_shift(&v, db, ShiftMethod::Cubic)?;
        }
        if !(w.min() > 0.0) {
            let (index, &value) = w
                .values()
                .iter()
                .enumerate()
                .find(|(_, x)| !(**x > 0.0))
                .expect("a non-positive node exists");
            return Err(SimError::PositivityLoss { index, value });
        }
        tele.min_u = tele.min_u.min(w.min());

        if j % cfg.record_every == 0 || j == intervals {
            let t_mid = t0 + (j as f64 - 0.5) * delta;
            let t_end = t0 + knot(j);
            for (t, f) in [(t_mid, &v), (t_end, &w)] {
                traj.diagnostics
                    .push(DiagnosticsRecord::measure(t, f, m, traj.ref_mean, cum_diss, cum_d2)?);
                traj.times.push(t);
                traj.snapshots.push(f.clone());
            }
        }
        state = w;
    }
    traj.final_time = t0 + cfg.horizon;
    traj.final_state = state;
    Ok(())
}

/// Runs the scheme with `N+1`, `2(N+1)`, ... `2^doublings (N+1)` intervals on
/// bridge refinements of `path` and returns, for each refinement, its
/// interval count and the largest sup-norm gap to the previous resolution
/// over the coarse knots `j * delta`.
pub fn splitting_self_convergence(
    u0: &Field,
    cfg: &SplittingConfig,
    path: &WienerPath,
    doublings: u32,
) -> Result<Vec<(usize, f64)>> {
    if doublings == 0 {
        return Err(SimError::InvalidParameter("need at least one doubling".into()));
    }
    if path.steps() != cfg.intervals {
        return Err(SimError::PathGridMismatch(format!(
            "path has {} steps, run has {} intervals",
            path.steps(),
            cfg.intervals
        )));
    }
    let coarse_times: Vec<f64> = (0..=cfg.intervals)
        .map(|j| cfg.horizon * j as f64 / cfg.intervals as f64)
        .collect();
    let mut previous: Option<Vec<Field>> = None;
    let mut out = Vec::with_capacity(doublings as usize);
    for k in 0..=doublings {
        let factor = 1usize << k;
        let run_cfg = SplittingConfig {
            intervals: cfg.intervals * factor,
            record_every: factor,
            ..*cfg
        };
        let traj = run_splitting(u0, &run_cfg, &path.refine_times(k))?;
        let states: Vec<Field> = coarse_times
            .iter()
            .map(|&t| traj.snapshot_at(t).cloned().expect("coarse knots are recorded"))
            .collect();
        if let Some(prev) = previous {
            let gap = prev
                .iter()
                .zip(&states)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            out.push((run_cfg.intervals, gap));
        }
        previous = Some(states);
    }
    Ok(out)
}
