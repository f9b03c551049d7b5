//! Stochastic half-step. The transport noise moves the profile rigidly, so
//! over an interval with path increment `db` the exact flow is the
//! translation `w(x) -> w(x + db)` on the torus.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::banded::CyclicBanded;
use crate::error::{Result, SimError};
use crate::grid::{integrate, Field};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftMethod {
    /// Phase rotation of the discrete Fourier coefficients.
    #[default]
    Spectral,
    /// Periodic cubic spline through the nodes, sampled at shifted nodes.
    Cubic,
}

impl std::str::FromStr for ShiftMethod {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "cubic" => Ok(Self::Cubic),
            other => Err(SimError::Config(format!("unknown shift method '{other}'"))),
        }
    }
}

impl std::fmt::Display for ShiftMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spectral => "spectral",
            Self::Cubic => "cubic",
        })
    }
}

/// Returns the field sampled at `x_j + delta_beta` (shift taken mod `L`).
///
/// The spectral shift is exact for the trigonometric interpolant. The
/// Nyquist mode has no sign-consistent phase on a real grid and is scaled by
/// `cos(pi n delta_beta / L)`, which keeps the output real.
pub fn stochastic_shift(w: &Field, delta_beta: f64, method: ShiftMethod) -> Result<Field> {
    if !delta_beta.is_finite() {
        return Err(SimError::InvalidParameter(format!("shift {delta_beta} is not finite")));
    }
    let grid = *w.grid();
    let shift = delta_beta.rem_euclid(grid.length());
    if shift == 0.0 {
        return Ok(w.clone());
    }
    let values = match method {
        ShiftMethod::Spectral => spectral_shift(w.values(), shift / grid.length()),
        ShiftMethod::Cubic => cubic_shift(w.values(), shift / grid.spacing())?,
    };
    Field::new(grid, values)
}

/// `frac` is the shift as a fraction of the period.
fn spectral_shift(values: &[f64], frac: f64) -> Vec<f64> {
    let n = values.len();
    let mut c = spectral::forward(values);
    for (k, z) in c.iter_mut().enumerate() {
        let kk = spectral::wavenumber(k, n);
        let phase = 2.0 * PI * kk as f64 * frac;
        if 2 * k == n {
            *z *= phase.cos();
        } else {
            *z *= Complex64::from_polar(1.0, phase);
        }
    }
    spectral::inverse_real(c)
}

/// `cells` is the shift in units of the grid spacing.
fn cubic_shift(values: &[f64], cells: f64) -> Result<Vec<f64>> {
    let n = values.len();
    // second derivatives times h^2: M_{j-1} + 4 M_j + M_{j+1} = 6 (second difference)
    let mut a = CyclicBanded::zeros(n, 1)?;
    let mut rhs = vec![0.0; n];
    for j in 0..n {
        a.set(j, -1, 1.0);
        a.set(j, 0, 4.0);
        a.set(j, 1, 1.0);
        rhs[j] = 6.0 * (values[(j + 1) % n] - 2.0 * values[j] + values[(j + n - 1) % n]);
    }
    let m = a.solve(&rhs)?;
    let whole = cells.floor();
    let r = cells - whole;
    let offset = whole as usize % n;
    let (wa, wb) = (1.0 - r, r);
    let (ca, cb) = ((wa * wa * wa - wa) / 6.0, (wb * wb * wb - wb) / 6.0);
    Ok((0..n)
        .map(|j| {
            let i = (j + offset) % n;
            let k = (i + 1) % n;
            wa * values[i] + wb * values[k] + ca * m[i] + cb * m[k]
        })
        .collect())
}

/// Spectral derivative; the Nyquist mode is dropped.
pub fn spectral_dx(w: &Field) -> Field {
    let n = w.len();
    let l = w.grid().length();
    let mut c = spectral::forward(w.values());
    for (k, z) in c.iter_mut().enumerate() {
        if 2 * k == n {
            *z = Complex64::new(0.0, 0.0);
        } else {
            let kk = spectral::wavenumber(k, n) as f64;
            *z *= Complex64::new(0.0, 2.0 * PI * kk / l);
        }
    }
    Field::from_vec_unchecked(*w.grid(), spectral::inverse_real(c))
}

/// `(int phi(w_before), int phi(w_after))`
pub fn phi_integral_check(
    w_before: &Field,
    w_after: &Field,
    phi: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    if w_before.grid() != w_after.grid() {
        return Err(SimError::InvalidParameter("fields live on different grids".into()));
    }
    Ok((integrate(&w_before.map(&phi)), integrate(&w_after.map(&phi))))
}
