//! Spatial conditional extremes model on Laplace margins.
//!
//! Given a conditioning site s0 and threshold tau, the field at the other
//! sites given Y(s0) = y0 > tau is Gaussian with location a(d; y0) =
//! alpha(d; y0) y0 and scale b(d; y0) = y0^beta(d) applied to a residual
//! Matérn field constrained to zero at s0, plus a nugget. The decay rates of
//! alpha depend on the exceedance level, which is what lets the model fit at
//! comparatively low thresholds.

mod fit;
mod posterior;
mod prefit;
mod sim;

pub use fit::{fit_map, fit_map_multistart, CondExtremesFit, FitDiagnostics};
pub use posterior::{CondFitConfig, CondPosterior};
pub use prefit::{least_squares_prefit, PrefitResult};
pub use sim::{model_chi, simulate_events, CondFieldSimulator};

use crate::error::{Error, Result};
use crate::laplace::LaplaceCube;
use crate::matern::{matern_correlation, MaternParams};
use serde::{Deserialize, Serialize};

/// Parameters of the standardizing functions a and b.
///
/// alpha(d; y0) = exp(-(d / lambda_a(y0))^kappa_a(y0)) with
/// lambda_a(y0) = lambda_a0 exp(-(y0 - tau)/lambda_a_decay) and
/// kappa_a(y0) = kappa_a0 exp(-((y0 - tau)/kappa_a_decay)^kappa_a_power);
/// beta(d) = beta0 exp(-(d / lambda_b)^kappa_b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizingParams {
    /// Location decay range at y0 = tau, in km.
    pub lambda_a0: f64,
    /// e-folding of lambda_a in the exceedance excess (Laplace units).
    pub lambda_a_decay: f64,
    /// Location decay shape at y0 = tau.
    pub kappa_a0: f64,
    /// Scale of the excess in the kappa_a profile.
    pub kappa_a_decay: f64,
    /// Power of the excess in the kappa_a profile.
    pub kappa_a_power: f64,
    /// beta(0), in [0, 1).
    pub beta0: f64,
    /// Range of the beta profile, km.
    pub lambda_b: f64,
    /// Shape of the beta profile.
    pub kappa_b: f64,
}

impl StandardizingParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lambda_a0", self.lambda_a0),
            ("lambda_a_decay", self.lambda_a_decay),
            ("kappa_a0", self.kappa_a0),
            ("kappa_a_decay", self.kappa_a_decay),
            ("kappa_a_power", self.kappa_a_power),
            ("lambda_b", self.lambda_b),
            ("kappa_b", self.kappa_b),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite; got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta0) {
            return Err(Error::InvalidParameter(format!(
                "beta0 must lie in [0, 1); got {}",
                self.beta0
            )));
        }
        Ok(())
    }

    /// Location range at excess = y0 - tau.
    pub fn lambda_a(&self, excess: f64) -> f64 {
        self.lambda_a0 * (-excess / self.lambda_a_decay).exp()
    }

    /// Location shape at excess = y0 - tau.
    pub fn kappa_a(&self, excess: f64) -> f64 {
        let p = (excess / self.kappa_a_decay).powf(self.kappa_a_power);
        self.kappa_a0 * (-p).exp()
    }

    /// alpha(d; y0) for excess = y0 - tau >= 0.
    pub fn alpha(&self, d: f64, excess: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        let g = (d / self.lambda_a(excess)).powf(self.kappa_a(excess));
        (-g).exp()
    }

    /// beta(d) in [0, beta0].
    pub fn beta(&self, d: f64) -> f64 {
        if d == 0.0 {
            return self.beta0;
        }
        self.beta0 * (-(d / self.lambda_b).powf(self.kappa_b)).exp()
    }
}

/// alpha(d; y0) given the model threshold.
pub fn alpha_fn(d: f64, y0: f64, params: &StandardizingParams, tau: f64) -> f64 {
    assert!(d >= 0.0 && y0 >= tau);
    params.alpha(d, y0 - tau)
}

/// beta(d).
pub fn beta_fn(d: f64, params: &StandardizingParams) -> f64 {
    assert!(d >= 0.0);
    params.beta(d)
}

/// Fitted conditional extremes model for one conditioning site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondExtremesModel {
    pub standardizing: StandardizingParams,
    /// Residual Matérn field (smoothness fixed to 1/2).
    pub residual: MaternParams,
    /// Nugget standard deviation (absent at s0).
    pub nugget_sd: f64,
    /// Laplace-scale threshold.
    pub tau: f64,
    /// Conditioning site index.
    pub s0: usize,
}

impl CondExtremesModel {
    pub fn new(
        standardizing: StandardizingParams,
        residual: MaternParams,
        nugget_sd: f64,
        tau: f64,
        s0: usize,
    ) -> Result<Self> {
        standardizing.validate()?;
        if nugget_sd < 0.0 {
            return Err(Error::InvalidParameter(
                "nugget standard deviation must be nonnegative".into(),
            ));
        }
        Ok(CondExtremesModel {
            standardizing,
            residual,
            nugget_sd,
            tau,
            s0,
        })
    }

    /// Marginal standard deviation of the constrained residual at distance d
    /// from the conditioning site: sigma sqrt(1 - gamma(d)^2).
    pub fn residual_sd_at(&self, d: f64) -> f64 {
        let g = matern_correlation(d, &self.residual);
        self.residual.sigma * (1.0 - g * g).max(0.0).sqrt()
    }

    /// Conditional mean and standard deviation of Y(s) given Y(s0) = y0, for
    /// a site at distance d: (alpha(d; y0) y0, sqrt(sigma(d)^2 y0^(2 beta(d))
    /// + nugget^2)). At d = 0 this is (y0, 0) exactly.
    pub fn conditional_moments(&self, d: f64, y0: f64) -> (f64, f64) {
        if d == 0.0 {
            return (y0, 0.0);
        }
        let excess = y0 - self.tau;
        let mean = self.standardizing.alpha(d, excess) * y0;
        let b = y0.powf(self.standardizing.beta(d));
        let sd_z = self.residual_sd_at(d);
        let sd = (sd_z * sd_z * b * b + self.nugget_sd * self.nugget_sd).sqrt();
        (mean, sd)
    }
}

/// Threshold exceedance events at the conditioning site, holding the
/// Laplace-scale field at the remaining usable sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceEvents {
    pub s0: usize,
    pub tau: f64,
    /// Candidate sites (unmasked, s0 excluded); event fields align to this.
    pub sites: Vec<usize>,
    pub events: Vec<ExceedanceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceEvent {
    /// Time index in the source cube (informational).
    pub time_index: usize,
    /// Exceedance value at s0.
    pub y0: f64,
    /// Laplace values aligned to `sites`; NaN = not observed.
    pub values: Vec<f64>,
}

impl ExceedanceEvents {
    pub fn n_events(&self) -> usize {
        self.events.len()
    }

    /// Total count of observed field values across events.
    pub fn n_observations(&self) -> usize {
        self.events
            .iter()
            .map(|e| e.values.iter().filter(|v| !v.is_nan()).count())
            .sum()
    }
}

/// Times where Y(s0) strictly exceeds tau, with their spatial fields.
pub fn extract_events(cube: &LaplaceCube, s0: usize, tau: f64) -> Result<ExceedanceEvents> {
    if s0 >= cube.n_sites() {
        return Err(Error::InvalidInput(format!(
            "conditioning site {s0} out of range"
        )));
    }
    if !cube.site_mask[s0] {
        return Err(Error::InvalidInput(
            "conditioning site is masked out".into(),
        ));
    }
    let sites: Vec<usize> = (0..cube.n_sites())
        .filter(|&s| s != s0 && cube.site_mask[s])
        .collect();
    let mut events = Vec::new();
    for t in 0..cube.n_times() {
        if let Some(y0) = cube.value(t, s0) {
            if y0 > tau {
                let values: Vec<f64> = sites.iter().map(|&s| cube.raw(t, s)).collect();
                events.push(ExceedanceEvent {
                    time_index: t,
                    y0,
                    values,
                });
            }
        }
    }
    if events.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no exceedances of tau = {tau:.3} at site {s0}; lower the threshold probability"
        )));
    }
    Ok(ExceedanceEvents {
        s0,
        tau,
        sites,
        events,
    })
}
