//! Regularized quadratic mobility `f_eps(s) = s^4 / (eps + s^2)`, the entropy
//! density `G_eps(s) = eps / (6 s^2) - ln s` with `G_eps'' = 1 / f_eps`, and
//! the lift `u0 + eps^theta` that makes initial data strictly positive.

use crate::error::{Result, SimError};
use crate::grid::{integrate, Field};

/// Default lift exponent; any value in `(0, 2/5)` is admissible.
pub const DEFAULT_THETA: f64 = 0.3;

/// `epsilon = 0` selects the limit mobility `s^2`. It is accepted for mobility
/// evaluation only; every entropy operation rejects it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityModel {
    epsilon: f64,
    theta: f64,
}

impl MobilityModel {
    pub fn new(epsilon: f64, theta: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        if !(theta > 0.0 && theta < 0.4) {
            return Err(SimError::InvalidParameter(format!(
                "theta must lie in (0, 2/5), got {theta}"
            )));
        }
        Ok(Self { epsilon, theta })
    }

    pub fn with_epsilon(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, DEFAULT_THETA)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `eps^theta`, the constant added to the initial data.
    pub fn lift(&self) -> f64 {
        self.epsilon.powf(self.theta)
    }

    pub fn f_eps(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(SimError::NegativeHeight(s));
        }
        Ok(self.f_unchecked(s))
    }

    pub fn f_eps_prime(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(SimError::NegativeHeight(s));
        }
        Ok(self.f_prime_unchecked(s))
    }

    pub fn entropy_g(&self, s: f64) -> Result<f64> {
        self.check_entropy_arg(s)?;
        Ok(self.epsilon / (6.0 * s * s) - s.ln())
    }

    /// `G_eps'(s) = -1/s - eps / (3 s^3)`.
    pub fn entropy_g_prime(&self, s: f64) -> Result<f64> {
        self.check_entropy_arg(s)?;
        Ok(-1.0 / s - self.epsilon / (3.0 * s * s * s))
    }

    pub fn entropy_g_second(&self, s: f64) -> Result<f64> {
        self.check_entropy_arg(s)?;
        let s2 = s * s;
        Ok((self.epsilon + s2) / (s2 * s2))
    }

    /// Adds `eps^theta` to non-negative initial data.
    pub fn lift_initial(&self, u0: &Field) -> Result<Field> {
        if self.epsilon <= 0.0 {
            return Err(SimError::InvalidParameter(
                "the initial lift needs epsilon > 0".into(),
            ));
        }
        if let Some((index, &value)) = u0.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(SimError::NegativeInitialData { index, value });
        }
        let lift = self.lift();
        Ok(u0.map(|v| v + lift))
    }

    /// `integral of G_eps(f)`.
    ///
    /// For strictly positive grid fields this is always finite, which is the
    /// discrete counterpart of requiring `|ln u0|` to be integrable.
    pub fn entropy_functional(&self, f: &Field) -> Result<f64> {
        if self.epsilon == 0.0 {
            return Err(SimError::LimitMobilityHasNoEpsilonEntropy);
        }
        let mut g = Vec::with_capacity(f.len());
        for &s in f.values() {
            g.push(self.entropy_g(s)?);
        }
        Ok(integrate(&Field::from_vec_unchecked(*f.grid(), g)))
    }

    fn check_entropy_arg(&self, s: f64) -> Result<()> {
        if self.epsilon == 0.0 {
            return Err(SimError::LimitMobilityHasNoEpsilonEntropy);
        }
        if !(s > 0.0) {
            return Err(SimError::NonPositiveHeight(s));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn f_unchecked(&self, s: f64) -> f64 {
        let s2 = s * s;
        if self.epsilon == 0.0 {
            s2
        } else {
            s2 * s2 / (self.epsilon + s2)
        }
    }

    /// `(2 s^5 + 4 eps s^3) / (eps + s^2)^2`.
    #[inline]
    pub(crate) fn f_prime_unchecked(&self, s: f64) -> f64 {
        if self.epsilon == 0.0 {
            return 2.0 * s;
        }
        let s2 = s * s;
        let d = self.epsilon + s2;
        s * s2 * (2.0 * s2 + 4.0 * self.epsilon) / (d * d)
    }
}
