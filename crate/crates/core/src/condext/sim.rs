//! Conditional simulation from a fitted model and the model-implied
//! conditional exceedance probability.

use super::{CondExtremesModel, ExceedanceEvent, ExceedanceEvents};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::laplace::laplace_quantile;
use crate::matern::{covariance_matrix_over, ConstrainedFieldSampler};
use crate::special::norm_cdf;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// Cached sampler for repeated conditional draws from one model.
pub struct CondFieldSimulator {
    model: CondExtremesModel,
    /// Geometry site indices the simulator covers, in output order; contains s0.
    sites: Vec<usize>,
    /// Position of s0 within `sites`.
    s0_pos: usize,
    /// Distance of each covered site to s0.
    d0: Vec<f64>,
    sampler: ConstrainedFieldSampler,
}

impl CondFieldSimulator {
    /// Simulator over every site of the geometry.
    pub fn new(model: CondExtremesModel, geometry: &GridGeometry) -> Result<Self> {
        let sites: Vec<usize> = (0..geometry.n_sites()).collect();
        Self::over_sites(model, geometry, sites)
    }

    /// Simulator over a subset of sites (a simulation region); must include s0.
    pub fn over_sites(
        model: CondExtremesModel,
        geometry: &GridGeometry,
        sites: Vec<usize>,
    ) -> Result<Self> {
        let s0_pos = sites
            .iter()
            .position(|&s| s == model.s0)
            .ok_or_else(|| {
                Error::InvalidInput("site set does not contain the conditioning site".into())
            })?;
        let coords: Vec<(f64, f64)> = sites.iter().map(|&s| geometry.site_coords(s)).collect();
        let (x0, y0) = coords[s0_pos];
        let d0: Vec<f64> = coords
            .iter()
            .map(|(x, y)| ((x - x0).powi(2) + (y - y0).powi(2)).sqrt())
            .collect();
        let cov = covariance_matrix_over(&coords, &model.residual);
        let sampler = ConstrainedFieldSampler::from_covariance(
            cov,
            model.residual.sigma * model.residual.sigma,
            Some(s0_pos),
        )?;
        Ok(CondFieldSimulator {
            model,
            sites,
            s0_pos,
            d0,
            sampler,
        })
    }

    pub fn model(&self) -> &CondExtremesModel {
        &self.model
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn s0_pos(&self) -> usize {
        self.s0_pos
    }

    /// One conditional Laplace field given Y(s0) = y0; output aligns with
    /// `sites`. The conditioning site carries y0 exactly.
    pub fn simulate<R: Rng + ?Sized>(&self, y0: f64, rng: &mut R) -> Vec<f64> {
        let excess = (y0 - self.model.tau).max(0.0);
        let z = self.sampler.sample(rng);
        let s = &self.model.standardizing;
        let mut field = vec![0.0; self.sites.len()];
        for i in 0..field.len() {
            if i == self.s0_pos {
                field[i] = y0;
                continue;
            }
            let d = self.d0[i];
            let a = s.alpha(d, excess) * y0;
            let b = y0.powf(s.beta(d));
            let eps: f64 = if self.model.nugget_sd > 0.0 {
                self.model.nugget_sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            field[i] = a + b * z[i] + eps;
        }
        field
    }
}

/// One-off conditional field over the whole geometry (builds a sampler).
pub fn simulate_conditional_field<R: Rng + ?Sized>(
    model: &CondExtremesModel,
    y0: f64,
    geometry: &GridGeometry,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(y0 > model.tau) {
        return Err(Error::InvalidInput(format!(
            "y0 = {y0} must exceed tau = {}",
            model.tau
        )));
    }
    Ok(CondFieldSimulator::new(model.clone(), geometry)?.simulate(y0, rng))
}

/// Synthetic exceedance events drawn from the model itself: y0 ~ tau + Exp(1)
/// and the field from the conditional law. The ground truth for recovery tests.
pub fn simulate_events(
    model: &CondExtremesModel,
    geometry: &GridGeometry,
    n_events: usize,
    seed: u64,
) -> Result<ExceedanceEvents> {
    let sim = CondFieldSimulator::new(model.clone(), geometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<usize> = (0..geometry.n_sites())
        .filter(|&s| s != model.s0)
        .collect();
    let mut events = Vec::with_capacity(n_events);
    for t in 0..n_events {
        let y0 = model.tau + rng.sample::<f64, _>(Exp1);
        let field = sim.simulate(y0, &mut rng);
        let values: Vec<f64> = sites
            .iter()
            .map(|&s| {
                let pos = sim.sites().iter().position(|&q| q == s).unwrap();
                field[pos]
            })
            .collect();
        events.push(ExceedanceEvent {
            time_index: t,
            y0,
            values,
        });
    }
    Ok(ExceedanceEvents {
        s0: model.s0,
        tau: model.tau,
        sites,
        events,
    })
}

/// Model-implied conditional exceedance probability at distance d:
/// P(Y(s) > F^{-1}(p) | Y(s0) > F^{-1}(p)), Monte Carlo over the exceedance
/// level with the site-conditional Gaussian probability computed exactly.
pub fn model_chi<R: Rng + ?Sized>(
    model: &CondExtremesModel,
    p: f64,
    d: f64,
    n_mc: usize,
    rng: &mut R,
) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must lie in (0,1)");
    assert!(n_mc >= 10_000, "model_chi needs n_mc >= 1e4");
    let tau_p = laplace_quantile(p);
    let mut acc = 0.0;
    for _ in 0..n_mc {
        let y0 = tau_p + rng.sample::<f64, _>(Exp1);
        let (mean, sd) = model.conditional_moments(d, y0);
        let prob = if sd == 0.0 {
            f64::from(mean > tau_p)
        } else {
            1.0 - norm_cdf((tau_p - mean) / sd)
        };
        acc += prob;
    }
    acc / n_mc as f64
}
