//! Generalized Pareto distribution indexed by a fixed-probability quantile
//! phi_beta, with tail parameter xi restricted to [0, 1/2].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpQuantileParams {
    /// Tail parameter, restricted to [0, 0.5].
    pub xi: f64,
    /// beta-quantile of the distribution.
    pub phi_beta: f64,
    /// Fixed probability the quantile refers to.
    pub beta: f64,
}

impl GpQuantileParams {
    pub const XI_MAX: f64 = 0.5;

    pub fn new(xi: f64, phi_beta: f64, beta: f64) -> Result<Self> {
        if !(0.0..=Self::XI_MAX).contains(&xi) {
            return Err(Error::InvalidParameter(format!(
                "xi must lie in [0, {}]; got {xi}",
                Self::XI_MAX
            )));
        }
        if !(phi_beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "phi_beta must be positive; got {phi_beta}"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0,1); got {beta}"
            )));
        }
        Ok(GpQuantileParams { xi, phi_beta, beta })
    }

    /// c = (1-beta)^(-xi) - 1, evaluated stably for small xi.
    fn c(&self) -> f64 {
        (-self.xi * (1.0 - self.beta).ln()).exp_m1()
    }

    /// Conventional GP scale; dividing exceedances by it standardizes them
    /// to a GP with scale 1 and the same xi.
    pub fn scale(&self) -> f64 {
        if self.xi == 0.0 {
            -self.phi_beta / (1.0 - self.beta).ln()
        } else {
            self.xi * self.phi_beta / self.c()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        assert!(x > 0.0, "gp cdf requires x > 0");
        if self.xi == 0.0 {
            -((x / self.phi_beta) * (1.0 - self.beta).ln()).exp_m1()
        } else {
            -(-(self.c() * x / self.phi_beta).ln_1p() / self.xi).exp_m1()
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "gp quantile requires p in (0,1)");
        if self.xi == 0.0 {
            self.phi_beta * (1.0 - p).ln() / (1.0 - self.beta).ln()
        } else {
            self.phi_beta * (-self.xi * (1.0 - p).ln()).exp_m1() / self.c()
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let s = self.scale();
        if self.xi == 0.0 {
            -s.ln() - x / s
        } else {
            -s.ln() - (1.0 / self.xi + 1.0) * (self.xi * x / s).ln_1p()
        }
    }
}

/// CDF of the standard GP (scale 1, tail xi), used as QQ reference.
pub fn standard_gp_cdf(xi: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if xi == 0.0 {
        -(-z).exp_m1()
    } else {
        1.0 - (1.0 + xi * z).powf(-1.0 / xi)
    }
}

/// Quantile of the standard GP (scale 1, tail xi).
pub fn standard_gp_quantile(xi: f64, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    if xi == 0.0 {
        -(1.0 - p).ln()
    } else {
        ((1.0 - p).powf(-xi) - 1.0) / xi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn quantile_identity_at_phi_beta() {
        for &xi in &[0.0, 0.145, 0.5] {
            let p = GpQuantileParams::new(xi, 1.7, 0.5).unwrap();
            assert_relative_eq!(p.cdf(p.phi_beta), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn continuous_at_xi_zero() {
        let a = GpQuantileParams::new(1e-8, 1.0, 0.5).unwrap();
        let b = GpQuantileParams::new(0.0, 1.0, 0.5).unwrap();
        assert!((a.cdf(2.0) - b.cdf(2.0)).abs() < 1e-6);
    }

    #[test]
    fn reference_value_at_paper_tail_parameter() {
        // xi = 0.145, beta = 0.5, phi = 1, x = 2:
        // H = 1 - (1 + (2^0.145 - 1) * 2)^(-1/0.145).
        let p = GpQuantileParams::new(0.145, 1.0, 0.5).unwrap();
        let c = 2.0f64.powf(0.145) - 1.0;
        let expected = 1.0 - (1.0 + c * 2.0).powf(-1.0 / 0.145);
        assert_relative_eq!(p.cdf(2.0), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 0.7337, epsilon = 5e-5);
    }

    #[test]
    fn xi_bound_enforced() {
        assert!(GpQuantileParams::new(0.51, 1.0, 0.5).is_err());
        assert!(GpQuantileParams::new(-0.01, 1.0, 0.5).is_err());
    }

    #[test]
    fn scale_matches_conventional_form() {
        // Standardized exceedance z = x / scale has H0(z) = H(x).
        let p = GpQuantileParams::new(0.3, 2.0, 0.5).unwrap();
        let x = 3.7;
        assert_relative_eq!(
            standard_gp_cdf(0.3, x / p.scale()),
            p.cdf(x),
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn quantile_identity_random_triples(
            xi in 0.0f64..0.5,
            phi in 0.05f64..10.0,
            beta in 0.05f64..0.95,
        ) {
            let p = GpQuantileParams::new(xi, phi, beta).unwrap();
            prop_assert!((p.cdf(p.phi_beta) - beta).abs() < 1e-10);
        }

        #[test]
        fn quantile_cdf_round_trip(
            xi in 0.0f64..0.5,
            phi in 0.1f64..5.0,
            prob in 0.01f64..0.99,
        ) {
            let p = GpQuantileParams::new(xi, phi, 0.5).unwrap();
            let x = p.quantile(prob);
            prop_assert!((p.cdf(x) - prob).abs() < 1e-10);
        }
    }
}
