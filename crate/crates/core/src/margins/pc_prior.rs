//! Penalized-complexity prior for the GP tail parameter, truncated at 1/2.
//!
//! The base model is xi = 0; the untruncated distribution has the closed-form
//! CDF 1 - exp(-lambda xi / sqrt(2 (1 - xi))), which the density below is the
//! derivative of.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPriorXi {
    /// Penalty parameter.
    pub lambda: f64,
}

impl PcPriorXi {
    pub const XI_UPPER: f64 = 0.5;

    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pc prior penalty must be positive; got {lambda}"
            )));
        }
        Ok(PcPriorXi { lambda })
    }

    /// CDF of the untruncated prior.
    fn raw_cdf(&self, xi: f64) -> f64 {
        1.0 - (-self.lambda * xi / (2.0 * (1.0 - xi)).sqrt()).exp()
    }

    /// Probability mass the untruncated prior puts below the truncation point.
    pub fn truncation_mass(&self) -> f64 {
        self.raw_cdf(Self::XI_UPPER)
    }

    /// Truncated density on [0, 1/2).
    pub fn density(&self, xi: f64) -> Result<f64> {
        if !(0.0..Self::XI_UPPER).contains(&xi) {
            return Err(Error::InvalidParameter(format!(
                "pc prior density requires xi in [0, 0.5); got {xi}"
            )));
        }
        let l = self.lambda;
        let raw = l * (1.0 - xi / 2.0) * (1.0 - xi).powf(-1.5) / 2.0f64.sqrt()
            * (-l * xi / (2.0 * (1.0 - xi)).sqrt()).exp();
        Ok(raw / self.truncation_mass())
    }

    /// Log of the truncated density, evaluated in log space so very large
    /// penalties do not underflow.
    pub fn log_density(&self, xi: f64) -> Result<f64> {
        if !(0.0..Self::XI_UPPER).contains(&xi) {
            return Err(Error::InvalidParameter(format!(
                "pc prior density requires xi in [0, 0.5); got {xi}"
            )));
        }
        let l = self.lambda;
        Ok(l.ln() + (1.0 - xi / 2.0).ln() - 1.5 * (1.0 - xi).ln() - 0.5 * 2.0f64.ln()
            - l * xi / (2.0 * (1.0 - xi)).sqrt()
            - self.truncation_mass().ln())
    }

    /// P(xi <= x) under the truncated prior.
    pub fn prob_below(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= Self::XI_UPPER {
            1.0
        } else {
            self.raw_cdf(x) / self.truncation_mass()
        }
    }
}
