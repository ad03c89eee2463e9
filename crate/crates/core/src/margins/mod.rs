//! Marginal model for nonzero precipitation intensity: gamma bulk below a
//! high per-day threshold, generalized Pareto tail above it, both indexed by
//! temporally smoothed quantile tracks.

mod fit;
mod gamma;
mod gp;
mod pc_prior;
mod track;

pub use fit::{
    fit_gamma_temporal, fit_gp_temporal, GammaFit, GpFit, SmoothingConfig, SmoothingPriors,
};
pub use gamma::GammaQuantileParams;
pub use gp::{standard_gp_cdf, standard_gp_quantile, GpQuantileParams};
pub use pc_prior::PcPriorXi;
pub use track::TemporalTrack;

use crate::cube::PrecipCube;
use crate::error::{Error, Result};
use crate::special::{gamma_cdf_raw, gamma_quantile_raw};
use crate::stats::quantile_sorted;
use serde::{Deserialize, Serialize};

/// Fitted split marginal model: gamma below u_t, rescaled GP above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    /// Per-day log psi_alpha track.
    pub gamma_track: TemporalTrack,
    /// Shared gamma shape.
    pub kappa: f64,
    /// Per-day log phi_beta track.
    pub gp_track: TemporalTrack,
    /// Shared GP tail parameter.
    pub xi: f64,
    /// Bulk/tail split probability (also the gamma quantile level alpha).
    pub p_u: f64,
    /// GP quantile level (phi_beta is the GP beta-quantile).
    pub beta: f64,
}

impl MarginalModel {
    pub fn new(
        gamma_track: TemporalTrack,
        kappa: f64,
        gp_track: TemporalTrack,
        xi: f64,
        p_u: f64,
        beta: f64,
    ) -> Result<Self> {
        if !(p_u > 0.0 && p_u < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_u must lie in (0,1); got {p_u}"
            )));
        }
        // Parameter ranges checked by the component types.
        GammaQuantileParams::new(kappa, 1.0, p_u)?;
        GpQuantileParams::new(xi, 1.0, beta)?;
        Ok(MarginalModel {
            gamma_track,
            kappa,
            gp_track,
            xi,
            p_u,
            beta,
        })
    }

    pub fn covers_day(&self, day: u32) -> bool {
        self.gamma_track.covers(day) && self.gp_track.covers(day)
    }

    pub fn gamma_params(&self, day: u32) -> Result<GammaQuantileParams> {
        GammaQuantileParams::new(self.kappa, self.gamma_track.value(day)?.exp(), self.p_u)
    }

    pub fn gp_params(&self, day: u32) -> Result<GpQuantileParams> {
        GpQuantileParams::new(self.xi, self.gp_track.value(day)?.exp(), self.beta)
    }

    /// Per-day bulk/tail threshold u_t: the p_u-quantile of the day's gamma.
    pub fn threshold_u(&self, day: u32) -> Result<f64> {
        Ok(self.gamma_params(day)?.quantile(self.p_u))
    }

    /// Split-model CDF F+ at day t.
    pub fn cdf(&self, x: f64, day: u32) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidInput(format!(
                "marginal cdf requires x > 0; got {x}"
            )));
        }
        let g = self.gamma_params(day)?;
        let u = g.quantile(self.p_u);
        if x <= u {
            Ok(g.cdf(x))
        } else {
            let h = self.gp_params(day)?;
            Ok(self.p_u + (1.0 - self.p_u) * h.cdf(x - u))
        }
    }

    /// Exact inverse of [`cdf`].
    pub fn quantile(&self, p: f64, day: u32) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!(
                "marginal quantile requires p in (0,1); got {p}"
            )));
        }
        let g = self.gamma_params(day)?;
        if p <= self.p_u {
            Ok(g.quantile(p))
        } else {
            let u = g.quantile(self.p_u);
            let h = self.gp_params(day)?;
            Ok(u + h.quantile((p - self.p_u) / (1.0 - self.p_u)))
        }
    }
}

/// Which half of the split model a QQ table evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QqBranch {
    GammaBulk,
    GpTail,
}

/// Table of paired (empirical, reference) quantiles of scale-standardized data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqTable {
    pub probs: Vec<f64>,
    pub empirical: Vec<f64>,
    pub reference: Vec<f64>,
    /// Set when the standardized sample is (numerically) constant.
    pub degenerate: bool,
    pub n: usize,
}

impl QqTable {
    pub fn max_abs_gap(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.reference)
            .map(|(e, r)| (e - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Standardized QQ table from (day, intensity) observations.
///
/// Gamma branch: every observation divided by its day's gamma scale, compared
/// against a gamma with that shape and scale 1. GP branch: threshold
/// exceedances divided by their day's GP scale, compared against a GP with
/// scale 1 and the fitted tail parameter.
pub fn standardized_qq_obs(
    obs: &[(u32, f64)],
    model: &MarginalModel,
    branch: QqBranch,
) -> Result<QqTable> {
    let mut standardized = Vec::new();
    match branch {
        QqBranch::GammaBulk => {
            for &(day, x) in obs {
                if x > 0.0 {
                    standardized.push(x / model.gamma_params(day)?.scale());
                }
            }
        }
        QqBranch::GpTail => {
            for &(day, x) in obs {
                if x <= 0.0 {
                    continue;
                }
                let u = model.threshold_u(day)?;
                if x > u {
                    standardized.push((x - u) / model.gp_params(day)?.scale());
                }
            }
        }
    }
    if standardized.is_empty() {
        return Err(Error::InsufficientData(
            "no observations for the requested QQ branch".into(),
        ));
    }
    standardized.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = standardized.len();
    let degenerate = standardized[n - 1] - standardized[0] < 1e-12;
    let probs: Vec<f64> = (1..=99).map(|k| k as f64 / 100.0).collect();
    let empirical: Vec<f64> = probs.iter().map(|&p| quantile_sorted(&standardized, p)).collect();
    let reference: Vec<f64> = probs
        .iter()
        .map(|&p| match branch {
            QqBranch::GammaBulk => gamma_quantile_raw(model.kappa, p),
            QqBranch::GpTail => gp::standard_gp_quantile(model.xi, p),
        })
        .collect();
    Ok(QqTable {
        probs,
        empirical,
        reference,
        degenerate,
        n,
    })
}

/// Cube-level wrapper around [`standardized_qq_obs`].
pub fn standardized_qq(
    cube: &PrecipCube,
    model: &MarginalModel,
    branch: QqBranch,
) -> Result<QqTable> {
    let mut obs = Vec::new();
    for (t, stamp) in cube.times().iter().enumerate() {
        for s in 0..cube.n_sites() {
            if let Some(v) = cube.value(t, s) {
                if v > 0.0 {
                    obs.push((stamp.day, v));
                }
            }
        }
    }
    standardized_qq_obs(&obs, model, branch)
}

/// Probability that a gamma-standardized observation exceeds z (internal QQ helper).
pub fn standard_gamma_cdf(shape: f64, z: f64) -> f64 {
    gamma_cdf_raw(shape, z)
}
