//! Thin wrapper around `rustfft` with per-thread plan caching.
//!
//! Convention: `forward` is unnormalized, `inverse` divides by `n`, so
//! `inverse(forward(x)) == x` up to rounding.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward(values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(&mut buf);
    buf
}

/// Inverse transform, keeping the real part.
pub fn inverse_real(mut coeffs: Vec<Complex64>) -> Vec<f64> {
    let n = coeffs.len();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    fft.process(&mut coeffs);
    let scale = 1.0 / n as f64;
    coeffs.into_iter().map(|c| c.re * scale).collect()
}

/// Signed wavenumber of FFT bin `k` on `n` points; the Nyquist bin maps to
/// `+n/2`.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}
