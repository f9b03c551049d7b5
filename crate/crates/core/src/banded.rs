//! Direct solver for cyclic banded systems.
//!
//! A periodic stencil with half-bandwidth `p` gives a matrix that is banded
//! except for two `p x p` corner blocks. We split it as `A = B + U V^T`, with
//! `B` the non-periodic band and `U V^T` holding the corners on the `2p`
//! boundary rows, factor `B` by banded LU with partial pivoting, and apply
//! the Sherman-Morrison-Woodbury correction through a `2p x 2p` capacitance
//! matrix. Cost is `O(n p^2)` per factorization and `O(n p)` per solve.

use crate::error::{Result, SimError};

/// Row-wise storage of a cyclic band: entry `(i, off)` is `A[i][(i + off) mod n]`
/// for `off` in `-p..=p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicBanded {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl CyclicBanded {
    /// Needs `p >= 1` and `n >= 2p + 1` so that every stencil column is distinct.
    pub fn zeros(n: usize, p: usize) -> Result<Self> {
        if p == 0 || n < 2 * p + 1 {
            return Err(SimError::InvalidParameter(format!(
                "cyclic band needs p >= 1 and n >= 2p + 1 (n = {n}, p = {p})"
            )));
        }
        Ok(Self {
            n,
            p,
            data: vec![0.0; n * (2 * p + 1)],
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.p
    }

    #[inline]
    fn slot(&self, i: usize, off: isize) -> usize {
        debug_assert!(off.unsigned_abs() <= self.p);
        i * (2 * self.p + 1) + (off + self.p as isize) as usize
    }

    #[inline]
    pub fn get(&self, i: usize, off: isize) -> f64 {
        self.data[self.slot(i, off)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, off: isize, v: f64) {
        let s = self.slot(i, off);
        self.data[s] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, off: isize, v: f64) {
        let s = self.slot(i, off);
        self.data[s] += v;
    }

    #[inline]
    fn col(&self, i: usize, off: isize) -> usize {
        (i as isize + off).rem_euclid(self.n as isize) as usize
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p as isize;
        (0..self.n)
            .map(|i| (-p..=p).map(|o| self.get(i, o) * x[self.col(i, o)]).sum())
            .collect()
    }

    /// Expands to a dense row-major matrix (tests and diagnostics).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let p = self.p as isize;
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, row) in m.iter_mut().enumerate() {
            for o in -p..=p {
                row[self.col(i, o)] += self.get(i, o);
            }
        }
        m
    }

    pub fn factor(&self) -> Result<CyclicFactorization> {
        let n = self.n;
        let p = self.p;
        let pi = p as isize;

        // non-periodic part in (m1 = m2 = p) band storage, a[i][j] = B[i][i - p + j]
        let mut band = BandLu::new(n, p, p);
        let mut corners: Vec<(usize, Vec<(usize, f64)>)> = Vec::with_capacity(2 * p);
        for i in 0..n {
            let mut wrapped = Vec::new();
            for o in -pi..=pi {
                let v = self.get(i, o);
                let c = i as isize + o;
                if (0..n as isize).contains(&c) {
                    band.a[i * band.mm + (o + pi) as usize] = v;
                } else {
                    wrapped.push((self.col(i, o), v));
                }
            }
            if i < p || i >= n - p {
                corners.push((i, wrapped));
            }
        }
        band.decompose()?;

        // B Z = U, one column per boundary row
        let k = corners.len();
        let z: Vec<Vec<f64>> = corners
            .iter()
            .map(|(row, _)| {
                let mut e = vec![0.0; n];
                e[*row] = 1.0;
                band.solve_in_place(&mut e);
                e
            })
            .collect();

        // capacitance I + V^T Z
        let mut cap = vec![0.0; k * k];
        for (r, (_, wrapped)) in corners.iter().enumerate() {
            for c in 0..k {
                let s: f64 = wrapped.iter().map(|&(col, v)| v * z[c][col]).sum();
                cap[r * k + c] = s + if r == c { 1.0 } else { 0.0 };
            }
        }
        let cap = DenseLu::new(k, cap)?;

        Ok(CyclicFactorization {
            band,
            corners,
            z,
            cap,
        })
    }

    /// Factor-and-solve convenience.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factor()?.solve(rhs)
    }
}

#[derive(Debug, Clone)]
pub struct CyclicFactorization {
    band: BandLu,
    corners: Vec<(usize, Vec<(usize, f64)>)>,
    z: Vec<Vec<f64>>,
    cap: DenseLu,
}

impl CyclicFactorization {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.band.n;
        if rhs.len() != n {
            return Err(SimError::LinearSolveFailure(format!(
                "right-hand side has length {} for a system of size {n}",
                rhs.len()
            )));
        }
        let mut y = rhs.to_vec();
        self.band.solve_in_place(&mut y);
        let vty: Vec<f64> = self
            .corners
            .iter()
            .map(|(_, wrapped)| wrapped.iter().map(|&(c, v)| v * y[c]).sum())
            .collect();
        let coef = self.cap.solve(&vty);
        for (zc, a) in self.z.iter().zip(&coef) {
            for (yi, zi) in y.iter_mut().zip(zc) {
                *yi -= a * zi;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::LinearSolveFailure("non-finite solution".into()));
        }
        Ok(y)
    }
}

/// Banded LU with partial pivoting in compact storage.
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    m1: usize,
    mm: usize,
    a: Vec<f64>,
    al: Vec<f64>,
    indx: Vec<usize>,
}

impl BandLu {
    fn new(n: usize, m1: usize, m2: usize) -> Self {
        let mm = m1 + m2 + 1;
        Self {
            n,
            m1,
            mm,
            a: vec![0.0; n * mm],
            al: vec![0.0; n * m1.max(1)],
            indx: vec![0; n],
        }
    }

    fn decompose(&mut self) -> Result<()> {
        let (n, m1, mm) = (self.n, self.m1, self.mm);
        let a = &mut self.a;
        // shift the top rows left so that every row starts at its first nonzero
        let mut l = m1;
        for i in 0..m1.min(n) {
            for j in (m1 - i)..mm {
                a[i * mm + j - l] = a[i * mm + j];
            }
            l -= 1;
            for j in (mm - l - 1)..mm {
                a[i * mm + j] = 0.0;
            }
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut l = m1;
        for k in 0..n {
            let mut dum = a[k * mm];
            let mut piv = k;
            if l < n {
                l += 1;
            }
            for j in k + 1..l {
                if a[j * mm].abs() > dum.abs() {
                    dum = a[j * mm];
                    piv = j;
                }
            }
            self.indx[k] = piv;
            if dum.abs() <= f64::EPSILON * 1e-3 * scale || !dum.is_finite() {
                return Err(SimError::LinearSolveFailure(format!(
                    "zero pivot in banded LU at row {k}"
                )));
            }
            if piv != k {
                for j in 0..mm {
                    a.swap(k * mm + j, piv * mm + j);
                }
            }
            for i in k + 1..l {
                let f = a[i * mm] / a[k * mm];
                self.al[k * m1.max(1) + i - k - 1] = f;
                for j in 1..mm {
                    a[i * mm + j - 1] = a[i * mm + j] - f * a[k * mm + j];
                }
                a[i * mm + mm - 1] = 0.0;
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, m1, mm) = (self.n, self.m1, self.mm);
        let mut l = m1;
        for k in 0..n {
            let j = self.indx[k];
            if j != k {
                x.swap(k, j);
            }
            if l < n {
                l += 1;
            }
            for j in k + 1..l {
                x[j] -= self.al[k * m1.max(1) + j - k - 1] * x[k];
            }
        }
        let mut l = 1;
        for i in (0..n).rev() {
            let mut dum = x[i];
            for k in 1..l {
                dum -= self.a[i * mm + k] * x[k + i];
            }
            x[i] = dum / self.a[i * mm];
            if l < mm {
                l += 1;
            }
        }
    }
}

/// Gaussian elimination with partial pivoting for the small capacitance system.
#[derive(Debug, Clone)]
struct DenseLu {
    k: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn new(k: usize, mut lu: Vec<f64>) -> Result<Self> {
        let mut perm: Vec<usize> = (0..k).collect();
        for c in 0..k {
            let piv = (c..k)
                .max_by(|&a, &b| lu[a * k + c].abs().total_cmp(&lu[b * k + c].abs()))
                .unwrap_or(c);
            if lu[piv * k + c].abs() < 1e-300 || !lu[piv * k + c].is_finite() {
                return Err(SimError::LinearSolveFailure(
                    "singular capacitance matrix in cyclic correction".into(),
                ));
            }
            if piv != c {
                for j in 0..k {
                    lu.swap(c * k + j, piv * k + j);
                }
                perm.swap(c, piv);
            }
            for r in c + 1..k {
                let f = lu[r * k + c] / lu[c * k + c];
                lu[r * k + c] = f;
                for j in c + 1..k {
                    lu[r * k + j] -= f * lu[c * k + j];
                }
            }
        }
        Ok(Self { k, lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for r in 0..k {
            for c in 0..r {
                x[r] -= self.lu[r * k + c] * x[c];
            }
        }
        for r in (0..k).rev() {
            for c in r + 1..k {
                x[r] -= self.lu[r * k + c] * x[c];
            }
            x[r] /= self.lu[r * k + r];
        }
        x
    }
}
