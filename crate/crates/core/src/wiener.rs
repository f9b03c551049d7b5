//! Sampled standard Brownian motion with Brownian-bridge refinement.
//!
//! A path is generated on an equispaced grid from a 64-bit seed. Refinement
//! inserts the midpoint of every interval from its conditional law given the
//! two end knots, `N((b_k + b_{k+1}) / 2, dt / 4)`. Each midpoint draws from
//! its own generator keyed by `(seed, level, k)`, so one logical path is
//! reproducible at every resolution and on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of counters.
pub fn derive_seed(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    times: Vec<f64>,
    values: Vec<f64>,
    seed: u64,
    level: u32,
}

impl WienerPath {
    /// Equispaced path on `[0, horizon]` with `steps` Gaussian increments.
    pub fn sample(seed: u64, horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SimError::InvalidHorizon(format!("horizon {horizon}")));
        }
        if steps == 0 {
            return Err(SimError::InvalidHorizon("need at least one step".into()));
        }
        let dt = horizon / steps as f64;
        let sd = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let mut times = Vec::with_capacity(steps + 1);
        let mut values = Vec::with_capacity(steps + 1);
        times.push(0.0);
        values.push(0.0);
        let mut b = 0.0;
        for k in 1..=steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            b += sd * z;
            times.push(if k == steps { horizon } else { k as f64 * dt });
            values.push(b);
        }
        Ok(Self {
            times,
            values,
            seed,
            level: 0,
        })
    }

    /// Inserts a bridge-sampled midpoint into every interval. Existing knots
    /// are kept bit-for-bit.
    pub fn refine(&self) -> Self {
        let level = self.level + 1;
        let m = self.times.len();
        let mut times = Vec::with_capacity(2 * m - 1);
        let mut values = Vec::with_capacity(2 * m - 1);
        for k in 0..m - 1 {
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            let (b0, b1) = (self.values[k], self.values[k + 1]);
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[level as u64, k as u64]));
            let z: f64 = StandardNormal.sample(&mut rng);
            times.push(t0);
            values.push(b0);
            times.push(0.5 * (t0 + t1));
            values.push(0.5 * (b0 + b1) + 0.5 * (t1 - t0).sqrt() * z);
        }
        times.push(self.times[m - 1]);
        values.push(self.values[m - 1]);
        Self {
            times,
            values,
            seed: self.seed,
            level,
        }
    }

    /// Applies [`refine`](Self::refine) `times` times.
    pub fn refine_times(&self, times: u32) -> Self {
        (0..times).fold(self.clone(), |p, _| p.refine())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("path has at least one knot")
    }

    /// Index of the knot at `t`, matched to within `1e-9` of the local spacing.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        let tol = 1e-9 * self.horizon() / self.steps() as f64;
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.times.len())
            .find(|&k| (self.times[k] - t).abs() <= tol)
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.knot_index(t)
            .map(|k| self.values[k])
            .ok_or(SimError::NotAKnot(t))
    }

    /// `b(t2) - b(t1)` for knots `t1 <= t2`. No interpolation is done.
    pub fn increment(&self, t1: f64, t2: f64) -> Result<f64> {
        if t1 > t2 {
            return Err(SimError::InvalidParameter(format!(
                "increment needs t1 <= t2, got {t1} > {t2}"
            )));
        }
        Ok(self.value_at(t2)? - self.value_at(t1)?)
    }
}
