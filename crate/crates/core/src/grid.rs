//! Uniform periodic grid on the torus `[0, L)` with node-centered samples,
//! second-order central difference operators and rectangle-rule quadrature.
//!
//! Every stencil wraps indices modulo `n`, so a [`Field`] is always read as
//! the samples of a periodic function. Non-periodic data (a ramp, say) is
//! accepted but produces a large derivative at the seam.

use crate::error::{Result, SimError};

/// Periodic mesh with `n` nodes `x_j = j h`, `h = L / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    length: f64,
    points: usize,
    spacing: f64,
}

impl TorusGrid {
    /// `points` must be a power of two and at least 8.
    pub fn new(length: f64, points: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(SimError::InvalidParameter(format!(
                "number of nodes must be a power of two >= 8, got {points}"
            )));
        }
        Ok(Self {
            length,
            points,
            spacing: length / points as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn coord(&self, j: usize) -> f64 {
        j as f64 * self.spacing
    }

    pub fn node_coords(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.coord(j)).collect()
    }
}

/// Node samples of a periodic grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(SimError::InvalidParameter(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.points()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimError::InvalidParameter(format!(
                "non-finite field value {} at node {j}",
                values[j]
            )));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values already known to be valid.
    pub(crate) fn from_vec_unchecked(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self::from_vec_unchecked(grid, vec![c; grid.points()])
    }

    /// Samples `f` at the nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.points()).map(|j| f(grid.coord(j))).collect();
        Self::from_vec_unchecked(grid, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Field, b: f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Field::from_vec_unchecked(self.grid, values)
    }

    /// Max-norm distance to `other`.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn wrap(j: isize, n: usize) -> usize {
    j.rem_euclid(n as isize) as usize
}

fn stencil(f: &Field, taps: &[(isize, f64)], scale: f64) -> Field {
    let n = f.len();
    let v = f.values();
    let out = (0..n as isize)
        .map(|j| scale * taps.iter().map(|&(o, c)| c * v[wrap(j + o, n)]).sum::<f64>())
        .collect();
    Field::from_vec_unchecked(f.grid, out)
}

/// Central first difference `(f_{j+1} - f_{j-1}) / 2h`.
pub fn dx(f: &Field) -> Field {
    let h = f.grid.spacing();
    stencil(f, &[(1, 1.0), (-1, -1.0)], 0.5 / h)
}

/// Compact second difference `(f_{j+1} - 2 f_j + f_{j-1}) / h^2`.
pub fn dxx(f: &Field) -> Field {
    let h = f.grid.spacing();
    stencil(f, &[(1, 1.0), (0, -2.0), (-1, 1.0)], 1.0 / (h * h))
}

/// Central third difference `(f_{j+2} - 2 f_{j+1} + 2 f_{j-1} - f_{j-2}) / 2h^3`.
pub fn dxxx(f: &Field) -> Field {
    let h = f.grid.spacing();
    stencil(
        f,
        &[(2, 1.0), (1, -2.0), (-1, 2.0), (-2, -1.0)],
        0.5 / (h * h * h),
    )
}

/// Forward difference `(f_{j+1} - f_j) / h`, the slope on edge `j + 1/2`.
pub fn dx_forward(f: &Field) -> Field {
    let h = f.grid.spacing();
    stencil(f, &[(1, 1.0), (0, -1.0)], 1.0 / h)
}

/// `h * sum_j f_j`; exact for trigonometric polynomials of degree below `n`.
pub fn integrate(f: &Field) -> f64 {
    f.grid.spacing() * f.values.iter().sum::<f64>()
}

pub fn inner(f: &Field, g: &Field) -> f64 {
    debug_assert_eq!(f.grid, g.grid);
    f.grid.spacing() * f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>()
}

pub fn l2_norm(f: &Field) -> f64 {
    inner(f, f).sqrt()
}

pub fn mean(f: &Field) -> f64 {
    integrate(f) / f.grid.length()
}
