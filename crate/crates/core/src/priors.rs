//! Penalized-complexity priors for Matérn range and standard deviation
//! hyperparameters, calibrated through upper-tail probability statements.

use serde::{Deserialize, Serialize};

/// PC prior on a Matérn range parameter in `dim` spatial dimensions,
/// calibrated so that P(range > range0) = alpha.
///
/// The distribution function is F(r) = exp(-lambda r^(-dim/2)); the base
/// model is infinite range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcRangePrior {
    pub range0: f64,
    pub alpha: f64,
    pub dim: f64,
}

impl PcRangePrior {
    pub fn new(range0: f64, alpha: f64, dim: f64) -> Self {
        PcRangePrior { range0, alpha, dim }
    }

    fn lambda(&self) -> f64 {
        -self.range0.powf(self.dim / 2.0) * (1.0 - self.alpha).ln()
    }

    pub fn prob_above(&self, r: f64) -> f64 {
        1.0 - (-self.lambda() * r.powf(-self.dim / 2.0)).exp()
    }

    pub fn log_density(&self, r: f64) -> f64 {
        let d2 = self.dim / 2.0;
        let l = self.lambda();
        (d2).ln() + l.ln() - (d2 + 1.0) * r.ln() - l * r.powf(-d2)
    }
}

/// PC (exponential) prior on a standard deviation, calibrated so that
/// P(sd > sd0) = alpha. The base model is sd = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcSdPrior {
    pub sd0: f64,
    pub alpha: f64,
}

impl PcSdPrior {
    pub fn new(sd0: f64, alpha: f64) -> Self {
        PcSdPrior { sd0, alpha }
    }

    fn lambda(&self) -> f64 {
        -self.alpha.ln() / self.sd0
    }

    pub fn prob_above(&self, s: f64) -> f64 {
        (-self.lambda() * s).exp()
    }

    pub fn log_density(&self, s: f64) -> f64 {
        let l = self.lambda();
        l.ln() - l * s
    }
}
