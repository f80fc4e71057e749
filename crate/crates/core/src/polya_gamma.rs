//! Pólya-Gamma posterior moments used by the augmented logistic updates.

use crate::error::{domain, Result};

/// Below this tilt the mean is evaluated by its even Taylor series.
pub const C_SWITCH: f64 = 1e-4;

/// q(ξ) = PG(1, c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgPosterior {
    c: f64,
}

impl PgPosterior {
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return domain(format!("Pólya-Gamma tilt must be finite and non-negative, got {c}"));
        }
        Ok(Self { c })
    }

    pub fn tilt(&self) -> f64 {
        self.c
    }

    pub fn mean(&self) -> f64 {
        mean_at(self.c)
    }
}

/// Posterior over ξ given the expected square ⟨ψ²⟩ of the linear predictor.
pub fn pg_tilt(expected_square: f64) -> Result<PgPosterior> {
    if !(expected_square >= 0.0) {
        return domain(format!("expected square must be non-negative, got {expected_square}"));
    }
    PgPosterior::new(expected_square.sqrt())
}

/// E[ξ] for ξ ∼ PG(1, c), equal to tanh(c/2)/(2c).
pub fn pg_mean(c: f64) -> Result<f64> {
    Ok(PgPosterior::new(c)?.mean())
}

pub(crate) fn mean_at(c: f64) -> f64 {
    if c < C_SWITCH {
        0.25 - c * c / 48.0
    } else {
        (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Mean for a tilt given as an expected square, clamping tiny negative rounding to zero.
pub(crate) fn mean_from_square(expected_square: f64) -> f64 {
    mean_at(expected_square.max(0.0).sqrt())
}
