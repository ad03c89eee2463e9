//! Penalized negative log posterior of the conditional extremes model.
//!
//! Each exceedance event contributes a multivariate Gaussian term with mean
//! a(d; y0) and covariance b Cz b + nugget^2 I over its observed sites,
//! where Cz is the residual covariance conditioned to vanish at s0. The
//! conditioning site itself is excluded from the Gaussian vector, since its
//! value is given. Gradients are analytic in all eleven parameters; the
//! covariance derivatives use diag/trace identities so one explicit inverse
//! per event covers every component.

use super::{CondExtremesModel, ExceedanceEvents, StandardizingParams};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::linalg::SpdFactor;
use crate::matern::MaternParams;
use crate::optim::Objective;
use crate::priors::{PcRangePrior, PcSdPrior};
use nalgebra::{DMatrix, DVector};

pub const N_PARAMS: usize = 11;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Priors and controls for the MAP fit.
#[derive(Debug, Clone)]
pub struct CondFitConfig {
    /// Prior means for the five log a-parameters (typically the prefit).
    pub a_log_means: [f64; 5],
    pub a_log_sd: f64,
    /// Prior means for (logit beta0, ln lambda_b, ln kappa_b).
    pub b_means: [f64; 3],
    pub b_sd: f64,
    pub range_prior: PcRangePrior,
    pub sd_prior: PcSdPrior,
    pub nugget_log_mean: f64,
    pub nugget_log_sd: f64,
    pub max_iterations: usize,
    pub compute_curvature: bool,
}

impl Default for CondFitConfig {
    fn default() -> Self {
        CondFitConfig {
            a_log_means: [10.0f64.ln(), 4.0f64.ln(), 0.2, 3.0f64.ln(), 0.4],
            a_log_sd: 5.0,
            b_means: [logit(0.65), 8.5f64.ln(), 0.5f64.ln()],
            b_sd: 5.0,
            range_prior: PcRangePrior::new(60.0, 0.05, 2.0),
            sd_prior: PcSdPrior::new(4.0, 0.05),
            nugget_log_mean: 0.1f64.ln(),
            nugget_log_sd: 5.0,
            max_iterations: 300,
            compute_curvature: true,
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconstrained parameter vector ordering:
/// [ln lambda_a0, ln lambda_a_decay, ln kappa_a0, ln kappa_a_decay,
///  ln kappa_a_power, logit beta0, ln lambda_b, ln kappa_b,
///  ln range, ln sigma, ln nugget].
pub fn model_to_theta(model: &CondExtremesModel) -> [f64; N_PARAMS] {
    let s = &model.standardizing;
    [
        s.lambda_a0.ln(),
        s.lambda_a_decay.ln(),
        s.kappa_a0.ln(),
        s.kappa_a_decay.ln(),
        s.kappa_a_power.ln(),
        logit(s.beta0.clamp(1e-8, 1.0 - 1e-8)),
        s.lambda_b.ln(),
        s.kappa_b.ln(),
        model.residual.rho.ln(),
        model.residual.sigma.ln(),
        model.nugget_sd.max(1e-12).ln(),
    ]
}

pub fn theta_to_model(theta: &[f64], tau: f64, s0: usize) -> Result<CondExtremesModel> {
    let standardizing = StandardizingParams {
        lambda_a0: theta[0].exp(),
        lambda_a_decay: theta[1].exp(),
        kappa_a0: theta[2].exp(),
        kappa_a_decay: theta[3].exp(),
        kappa_a_power: theta[4].exp(),
        beta0: sigmoid(theta[5]),
        lambda_b: theta[6].exp(),
        kappa_b: theta[7].exp(),
    };
    CondExtremesModel::new(
        standardizing,
        MaternParams::new(0.5, theta[8].exp(), theta[9].exp())?,
        theta[10].exp(),
        tau,
        s0,
    )
}

/// Per-theta shared quantities over the full candidate site list.
struct SharedState {
    /// exp(-kappa d0) to the conditioning site.
    gamma0: Vec<f64>,
    /// beta(d0) per site.
    beta_d: Vec<f64>,
    /// Constrained residual covariance; m x m.
    cz: DMatrix<f64>,
    /// Pairwise correlation exp(-kappa d); m x m.
    corr: DMatrix<f64>,
}

pub struct CondPosterior<'a> {
    events: &'a ExceedanceEvents,
    config: CondFitConfig,
    /// Distance of each candidate site to s0.
    d0: Vec<f64>,
    /// Pairwise distances among candidate sites, m x m row-major.
    dmat: Vec<f64>,
    /// Observed-site index lists per event (indices into the site list);
    /// empty marker means fully observed.
    obs_idx: Vec<Vec<usize>>,
    pub factorization_failures: usize,
}

impl<'a> CondPosterior<'a> {
    pub fn new(
        events: &'a ExceedanceEvents,
        geometry: &GridGeometry,
        config: CondFitConfig,
    ) -> Result<Self> {
        let m = events.sites.len();
        if m == 0 {
            return Err(Error::InsufficientData(
                "no candidate sites besides the conditioning site".into(),
            ));
        }
        let coords: Vec<(f64, f64)> = events
            .sites
            .iter()
            .map(|&s| geometry.site_coords(s))
            .collect();
        let (x0, y0c) = geometry.site_coords(events.s0);
        let d0: Vec<f64> = coords
            .iter()
            .map(|(x, y)| ((x - x0).powi(2) + (y - y0c).powi(2)).sqrt())
            .collect();
        if d0.iter().any(|&d| d == 0.0) {
            return Err(Error::InvalidInput(
                "a candidate site coincides with the conditioning site".into(),
            ));
        }
        let mut dmat = vec![0.0; m * m];
        for i in 0..m {
            for j in (i + 1)..m {
                let v = ((coords[i].0 - coords[j].0).powi(2)
                    + (coords[i].1 - coords[j].1).powi(2))
                .sqrt();
                dmat[i * m + j] = v;
                dmat[j * m + i] = v;
            }
        }
        let obs_idx = events
            .events
            .iter()
            .map(|e| {
                let idx: Vec<usize> = (0..m).filter(|&i| !e.values[i].is_nan()).collect();
                if idx.len() == m {
                    Vec::new()
                } else {
                    idx
                }
            })
            .collect();
        Ok(CondPosterior {
            events,
            config,
            d0,
            dmat,
            obs_idx,
            factorization_failures: 0,
        })
    }

    pub fn tau(&self) -> f64 {
        self.events.tau
    }

    pub fn config(&self) -> &CondFitConfig {
        &self.config
    }

    fn shared_state(&self, theta: &[f64]) -> SharedState {
        let m = self.events.sites.len();
        let rho = theta[8].exp();
        let sigma = theta[9].exp();
        let sigma2 = sigma * sigma;
        let kappa_m = 2.0 / rho; // sqrt(8 * 0.5) / rho
        let gamma0: Vec<f64> = self.d0.iter().map(|&d| (-kappa_m * d).exp()).collect();
        let beta0 = sigmoid(theta[5]);
        let lambda_b = theta[6].exp();
        let kappa_b = theta[7].exp();
        let beta_d: Vec<f64> = self
            .d0
            .iter()
            .map(|&d| beta0 * (-(d / lambda_b).powf(kappa_b)).exp())
            .collect();
        let mut corr = DMatrix::zeros(m, m);
        let mut cz = DMatrix::zeros(m, m);
        for i in 0..m {
            corr[(i, i)] = 1.0;
            cz[(i, i)] = sigma2 * (1.0 - gamma0[i] * gamma0[i]);
            for j in (i + 1)..m {
                let g = (-kappa_m * self.dmat[i * m + j]).exp();
                corr[(i, j)] = g;
                corr[(j, i)] = g;
                let v = sigma2 * (g - gamma0[i] * gamma0[j]);
                cz[(i, j)] = v;
                cz[(j, i)] = v;
            }
        }
        SharedState {
            gamma0,
            beta_d,
            cz,
            corr,
        }
    }

    /// Event mean profile and its five partial derivatives (optional).
    #[allow(clippy::type_complexity)]
    fn event_mean(
        &self,
        theta: &[f64],
        y0: f64,
        idx: &[usize],
        with_grad: bool,
    ) -> (Vec<f64>, Option<[Vec<f64>; 5]>) {
        let lambda_a0 = theta[0].exp();
        let lambda_decay = theta[1].exp();
        let kappa_a0 = theta[2].exp();
        let kappa_decay = theta[3].exp();
        let kappa_power = theta[4].exp();
        let excess = (y0 - self.events.tau).max(0.0);
        let lam = lambda_a0 * (-excess / lambda_decay).exp();
        let q = excess / kappa_decay;
        let p = q.powf(kappa_power);
        let kap = kappa_a0 * (-p).exp();
        // Sensitivities of ln lambda_a and ln kappa_a to the raw parameters.
        let dllam_dt0 = 1.0;
        let dllam_dt1 = excess / lambda_decay;
        let dlkap_dt2 = 1.0;
        let dlkap_dt3 = kappa_power * p;
        let dlkap_dt4 = if p > 0.0 && q > 0.0 {
            -kappa_power * p * q.ln()
        } else {
            0.0
        };
        let n = idx.len();
        let mut a = vec![0.0; n];
        let mut grads = if with_grad {
            Some([
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
                vec![0.0; n],
            ])
        } else {
            None
        };
        for (k, &i) in idx.iter().enumerate() {
            let x = self.d0[i] / lam;
            let lx = x.ln();
            let g = (kap * lx).exp(); // (d/lam)^kap
            if !(g < 700.0) {
                continue; // alpha underflows to 0; all sensitivities vanish
            }
            let ai = y0 * (-g).exp();
            a[k] = ai;
            if let Some(gr) = grads.as_mut() {
                let ag = ai * g;
                // d a / d t = -a * d g / d t
                gr[0][k] = ag * kap * dllam_dt0;
                gr[1][k] = ag * kap * dllam_dt1;
                gr[2][k] = -ag * kap * lx * dlkap_dt2;
                gr[3][k] = -ag * kap * lx * dlkap_dt3;
                gr[4][k] = -ag * kap * lx * dlkap_dt4;
            }
        }
        (a, grads)
    }

    /// Negative log likelihood; gradient accumulated into `grad` when given.
    pub fn neg_log_likelihood(&mut self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 30.0) {
            return f64::INFINITY;
        }
        let shared = self.shared_state(theta);
        let sigma_eps = theta[10].exp();
        let eps2 = sigma_eps * sigma_eps;
        let m = self.events.sites.len();
        let full_idx: Vec<usize> = (0..m).collect();
        let ln_y0_beta = |y0: f64, i: usize| y0.powf(shared.beta_d[i]);

        let mut nll = 0.0;
        for (e, event) in self.events.events.iter().enumerate() {
            let idx: &[usize] = if self.obs_idx[e].is_empty() {
                &full_idx
            } else {
                &self.obs_idx[e]
            };
            let n = idx.len();
            if n == 0 {
                continue;
            }
            let y0 = event.y0;
            let ln_y0 = y0.ln();
            let b: Vec<f64> = idx.iter().map(|&i| ln_y0_beta(y0, i)).collect();
            let (a, mean_grads) = self.event_mean(theta, y0, idx, grad.is_some());

            let mut cov = DMatrix::zeros(n, n);
            for (ki, &i) in idx.iter().enumerate() {
                for (kj, &j) in idx.iter().enumerate().skip(ki) {
                    let mut v = b[ki] * b[kj] * shared.cz[(i, j)];
                    if ki == kj {
                        v += eps2;
                    }
                    cov[(ki, kj)] = v;
                    cov[(kj, ki)] = v;
                }
            }
            let factor = match SpdFactor::new(&cov, theta[9].exp().powi(2)) {
                Ok(f) => f,
                Err(_) => {
                    self.factorization_failures += 1;
                    return f64::INFINITY;
                }
            };
            let r = DVector::from_fn(n, |k, _| event.values[idx[k]] - a[k]);
            let u = factor.solve(&r);
            let quad = r.dot(&u);
            nll += 0.5 * (factor.log_det() + quad + n as f64 * LN_2PI);

            if let Some(g) = grad.as_deref_mut() {
                let ainv = factor.inverse();
                let tr_ainv: f64 = (0..n).map(|k| ainv[(k, k)]).sum();
                let u_norm2 = u.dot(&u);
                let u_dot_r = quad;

                // Mean parameters.
                let mg = mean_grads.as_ref().unwrap();
                for t in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += mg[t][k] * u[k];
                    }
                    g[t] -= acc;
                }

                // b-profile parameters via dln b_i = ln(y0) dbeta_i.
                let beta0 = sigmoid(theta[5]);
                let lambda_b = theta[6].exp();
                let kappa_b = theta[7].exp();
                let mut acc = [0.0f64; 3];
                for (k, &i) in idx.iter().enumerate() {
                    let beta_i = shared.beta_d[i];
                    let h = (self.d0[i] / lambda_b).powf(kappa_b);
                    let lh = (self.d0[i] / lambda_b).ln();
                    let w = [
                        ln_y0 * beta_i * (1.0 - beta0),
                        ln_y0 * beta_i * kappa_b * h,
                        ln_y0 * (-beta_i) * kappa_b * h * lh,
                    ];
                    let diag_term = 1.0 - eps2 * ainv[(k, k)];
                    let quad_term = u[k] * (r[k] - eps2 * u[k]);
                    for (t, wt) in w.iter().enumerate() {
                        acc[t] += wt * (diag_term - quad_term);
                    }
                }
                g[5] += acc[0];
                g[6] += acc[1];
                g[7] += acc[2];

                // ln sigma.
                g[9] += (n as f64 - eps2 * tr_ainv) - (u_dot_r - eps2 * u_norm2);

                // ln rho: contract with d Cz / d ln rho built on the fly.
                let rho = theta[8].exp();
                let sigma2 = theta[9].exp().powi(2);
                let kappa_m = 2.0 / rho;
                let mut tr_term = 0.0;
                let mut quad_term = 0.0;
                for (ki, &i) in idx.iter().enumerate() {
                    let bu_i = b[ki] * u[ki];
                    for (kj, &j) in idx.iter().enumerate().skip(ki) {
                        let dij = self.dmat[i * m + j];
                        let dcz = sigma2
                            * kappa_m
                            * (shared.corr[(i, j)] * dij
                                - shared.gamma0[i]
                                    * shared.gamma0[j]
                                    * (self.d0[i] + self.d0[j]));
                        let w = if ki == kj { 1.0 } else { 2.0 };
                        tr_term += w * ainv[(ki, kj)] * b[ki] * b[kj] * dcz;
                        quad_term += w * bu_i * b[kj] * u[kj] * dcz;
                    }
                }
                g[8] += 0.5 * tr_term - 0.5 * quad_term;

                // ln nugget.
                g[10] += eps2 * (tr_ainv - u_norm2);
            }
        }
        nll
    }

    /// Negative log prior; gradient accumulated into `grad` when given.
    pub fn neg_log_prior(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        if theta.iter().any(|t| !t.is_finite() || t.abs() > 30.0) {
            return f64::INFINITY;
        }
        let c = &self.config;
        let mut val = 0.0;
        let mut gauss = |t: f64, mean: f64, sd: f64, slot: usize, grad: &mut Option<&mut [f64]>| {
            let z = (t - mean) / sd;
            val_add(&mut val, 0.5 * z * z + sd.ln() + 0.5 * LN_2PI);
            if let Some(g) = grad.as_deref_mut() {
                g[slot] += z / sd;
            }
        };
        for t in 0..5 {
            gauss(theta[t], c.a_log_means[t], c.a_log_sd, t, &mut grad);
        }
        for t in 0..3 {
            gauss(theta[5 + t], c.b_means[t], c.b_sd, 5 + t, &mut grad);
        }
        gauss(
            theta[10],
            c.nugget_log_mean,
            c.nugget_log_sd,
            10,
            &mut grad,
        );
        // PC priors with log-transform Jacobians.
        let rho = theta[8].exp();
        val += -c.range_prior.log_density(rho) - theta[8];
        let sigma = theta[9].exp();
        val += -c.sd_prior.log_density(sigma) - theta[9];
        if let Some(g) = grad.as_deref_mut() {
            // d/d ln rho of (ln rho + lambda / rho): 1 - lambda / rho, with
            // lambda = -range0 ln(1 - alpha) for dimension 2.
            let lam_r = -c.range_prior.range0 * (1.0 - c.range_prior.alpha).ln();
            g[8] += 1.0 - lam_r / rho;
            let lam_s = -c.sd_prior.alpha.ln() / c.sd_prior.sd0;
            g[9] += lam_s * sigma - 1.0;
        }
        val
    }
}

fn val_add(acc: &mut f64, v: f64) {
    *acc += v;
}

impl Objective for CondPosterior<'_> {
    fn value(&mut self, theta: &[f64]) -> f64 {
        let lik = self.neg_log_likelihood(theta, None);
        if !lik.is_finite() {
            return f64::INFINITY;
        }
        lik + self.neg_log_prior(theta, None)
    }

    fn value_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lik = self.neg_log_likelihood(theta, Some(grad));
        if !lik.is_finite() {
            return f64::INFINITY;
        }
        lik + self.neg_log_prior(theta, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condext::sim::simulate_events;
    use crate::condext::{ExceedanceEvent, ExceedanceEvents};
    use crate::laplace::threshold_on_laplace;
    use crate::matern::matern_correlation;
    use crate::optim::fd_gradient;

    fn tiny_events(tau: f64, y0: f64, value: f64) -> ExceedanceEvents {
        ExceedanceEvents {
            s0: 0,
            tau,
            sites: vec![1],
            events: vec![ExceedanceEvent {
                time_index: 0,
                y0,
                values: vec![value],
            }],
        }
    }

    fn default_model(tau: f64) -> CondExtremesModel {
        CondExtremesModel::new(
            crate::condext::tests::test_params(),
            MaternParams::new(0.5, 15.0, 1.5).unwrap(),
            0.1,
            tau,
            0,
        )
        .unwrap()
    }

    #[test]
    fn scalar_case_matches_hand_formula() {
        let tau = threshold_on_laplace(0.9).unwrap();
        let y0 = tau + 1.0;
        let value = 1.9;
        let events = tiny_events(tau, y0, value);
        let geometry = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let config = CondFitConfig::default();
        let model = default_model(tau);
        let theta = model_to_theta(&model);
        let mut post = CondPosterior::new(&events, &geometry, config.clone()).unwrap();
        let got = post.neg_log_likelihood(&theta, None);

        // Hand formula: one site at distance 1 from s0.
        let d = 1.0;
        let s = &model.standardizing;
        let a = s.alpha(d, y0 - tau) * y0;
        let g = matern_correlation(d, &model.residual);
        let var_z = model.residual.sigma.powi(2) * (1.0 - g * g);
        let b = y0.powf(s.beta(d));
        let var = b * b * var_z + model.nugget_sd.powi(2);
        let expected = 0.5 * (var.ln() + (value - a).powi(2) / var + LN_2PI);
        approx::assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn doubling_events_doubles_likelihood_part() {
        let tau = threshold_on_laplace(0.9).unwrap();
        let geometry = GridGeometry::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let model = default_model(tau);
        let single = simulate_events(&model, &geometry, 4, 40).unwrap();
        let mut doubled = single.clone();
        doubled.events.extend(single.events.iter().cloned());
        let theta = model_to_theta(&model);
        let mut p1 = CondPosterior::new(&single, &geometry, CondFitConfig::default()).unwrap();
        let mut p2 = CondPosterior::new(&doubled, &geometry, CondFitConfig::default()).unwrap();
        let l1 = p1.neg_log_likelihood(&theta, None);
        let l2 = p2.neg_log_likelihood(&theta, None);
        approx::assert_relative_eq!(l2, 2.0 * l1, epsilon = 1e-9);
        // Priors unchanged.
        approx::assert_relative_eq!(
            p1.neg_log_prior(&theta, None),
            p2.neg_log_prior(&theta, None),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let tau = threshold_on_laplace(0.9).unwrap();
        let geometry = GridGeometry::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let model = default_model(tau);
        let events = simulate_events(&model, &geometry, 6, 41).unwrap();
        let mut post =
            CondPosterior::new(&events, &geometry, CondFitConfig::default()).unwrap();
        let base = model_to_theta(&model);
        use rand::Rng as _;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..10 {
            let theta: Vec<f64> = base
                .iter()
                .map(|t| t + rng.random_range(-0.3..0.3))
                .collect();
            let mut grad = vec![0.0; N_PARAMS];
            let f0 = post.value_grad(&theta, &mut grad);
            assert!(f0.is_finite());
            let fd = fd_gradient(|x| post.value(x), &theta, 1e-5);
            for k in 0..N_PARAMS {
                let denom = grad[k].abs().max(fd[k].abs()).max(1e-3);
                assert!(
                    (grad[k] - fd[k]).abs() / denom < 1e-4,
                    "trial {trial} param {k}: analytic {} vs fd {}",
                    grad[k],
                    fd[k]
                );
            }
        }
    }

    #[test]
    fn truth_beats_perturbation_in_most_replicates() {
        let tau = threshold_on_laplace(0.9).unwrap();
        let geometry = GridGeometry::new(7, 7, 1.0, (0.0, 0.0)).unwrap();
        let mut model = default_model(tau);
        model.s0 = 24; // center of the 7x7 grid
        let theta_truth = model_to_theta(&model);
        let mut theta_pert = theta_truth;
        theta_pert[0] = (model.standardizing.lambda_a0 * 1.5).ln();
        let mut wins = 0;
        let reps = 20;
        for rep in 0..reps {
            let events = simulate_events(&model, &geometry, 60, 100 + rep).unwrap();
            let mut post =
                CondPosterior::new(&events, &geometry, CondFitConfig::default()).unwrap();
            let at_truth = post.value(&theta_truth);
            let at_pert = post.value(&theta_pert);
            if at_truth < at_pert {
                wins += 1;
            }
        }
        assert!(wins >= 19, "truth won only {wins}/{reps}");
    }

    #[test]
    fn missing_values_are_dropped_from_the_gaussian() {
        let tau = threshold_on_laplace(0.9).unwrap();
        let geometry = GridGeometry::new(3, 1, 1.0, (0.0, 0.0)).unwrap();
        let model = default_model(tau);
        let theta = model_to_theta(&model);
        // Two sites; second value missing. Must equal the scalar case.
        let events_full = tiny_events(tau, tau + 0.8, 1.4);
        let events_nan = ExceedanceEvents {
            s0: 0,
            tau,
            sites: vec![1, 2],
            events: vec![ExceedanceEvent {
                time_index: 0,
                y0: tau + 0.8,
                values: vec![1.4, f64::NAN],
            }],
        };
        let g2 = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let mut p_full =
            CondPosterior::new(&events_full, &g2, CondFitConfig::default()).unwrap();
        let mut p_nan =
            CondPosterior::new(&events_nan, &geometry, CondFitConfig::default()).unwrap();
        let a = p_full.neg_log_likelihood(&theta, None);
        let b = p_nan.neg_log_likelihood(&theta, None);
        approx::assert_relative_eq!(a, b, epsilon = 1e-10);
    }
}
