//! Matérn-correlated Gaussian random fields on the grid, with an exact
//! hard-zero constraint at a chosen site and nonstationary scaling.

use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::linalg::SpdFactor;
use crate::special::bessel_k_scaled;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Smoothness.
    pub nu: f64,
    /// Range in km.
    pub rho: f64,
    /// Marginal standard deviation.
    pub sigma: f64,
}

impl MaternParams {
    pub fn new(nu: f64, rho: f64, sigma: f64) -> Result<Self> {
        if !(nu > 0.0) || !(rho > 0.0) || !(sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "matern requires nu > 0, rho > 0, sigma >= 0; got nu={nu}, rho={rho}, sigma={sigma}"
            )));
        }
        Ok(MaternParams { nu, rho, sigma })
    }

    /// Scale parameter kappa = sqrt(8 nu) / rho.
    pub fn kappa(&self) -> f64 {
        (8.0 * self.nu).sqrt() / self.rho
    }
}

/// Matérn correlation at distance d (km).
///
/// gamma(d) = (kappa d)^nu K_nu(kappa d) / (2^(nu-1) Gamma(nu)); evaluated in
/// log space through the scaled Bessel function so large distances underflow
/// to zero instead of producing NaN.
pub fn matern_correlation(d: f64, params: &MaternParams) -> f64 {
    assert!(d >= 0.0, "distance must be nonnegative");
    if d == 0.0 {
        return 1.0;
    }
    let x = params.kappa() * d;
    let nu = params.nu;
    let log_val = nu * x.ln() + bessel_k_scaled(nu, x).ln() - x
        - (nu - 1.0) * std::f64::consts::LN_2
        - ln_gamma(nu);
    log_val.exp().min(1.0)
}

/// Dense Matérn covariance over the grid sites.
pub fn covariance_matrix(geometry: &GridGeometry, params: &MaternParams) -> DMatrix<f64> {
    let coords: Vec<(f64, f64)> = (0..geometry.n_sites())
        .map(|s| geometry.site_coords(s))
        .collect();
    covariance_matrix_over(&coords, params)
}

/// Dense Matérn covariance over an arbitrary coordinate list.
pub fn covariance_matrix_over(coords: &[(f64, f64)], params: &MaternParams) -> DMatrix<f64> {
    let s = coords.len();
    let sigma2 = params.sigma * params.sigma;
    let mut c = DMatrix::zeros(s, s);
    for i in 0..s {
        c[(i, i)] = sigma2;
        for j in (i + 1)..s {
            let d = ((coords[i].0 - coords[j].0).powi(2)
                + (coords[i].1 - coords[j].1).powi(2))
            .sqrt();
            let v = sigma2 * matern_correlation(d, params);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Sampler for a zero-mean Matérn field, optionally conditioned to be exactly
/// zero at one site.
///
/// The constraint is realized by exact Gaussian conditioning: the covariance
/// of the remaining sites is the Schur complement C - C(.,s0) C(s0,.) / C(s0,s0),
/// so every draw carries a literal 0.0 at the constrained site.
pub struct ConstrainedFieldSampler {
    n_sites: usize,
    constraint: Option<usize>,
    /// Indices of the free (sampled) sites.
    free_sites: Vec<usize>,
    factor: SpdFactor,
    /// Marginal variances of the (possibly conditioned) field at the free sites.
    variances: Vec<f64>,
}

impl ConstrainedFieldSampler {
    pub fn build(
        geometry: &GridGeometry,
        params: &MaternParams,
        constraint: Option<usize>,
    ) -> Result<Self> {
        let cov = covariance_matrix(geometry, params);
        Self::from_covariance(cov, params.sigma * params.sigma, constraint)
    }

    /// Build from an explicit covariance (used by the conditional-extremes
    /// residual field, which shares this machinery).
    pub fn from_covariance(
        cov: DMatrix<f64>,
        sigma2: f64,
        constraint: Option<usize>,
    ) -> Result<Self> {
        let n = cov.nrows();
        if let Some(s0) = constraint {
            if s0 >= n {
                return Err(Error::InvalidParameter(format!(
                    "constraint site {s0} out of range for {n} sites"
                )));
            }
        }
        let free_sites: Vec<usize> = (0..n).filter(|&s| Some(s) != constraint).collect();
        let reduced = match constraint {
            None => cov,
            Some(s0) => {
                let c00 = cov[(s0, s0)];
                if !(c00 > 0.0) {
                    return Err(Error::InvalidParameter(
                        "constraint site has zero variance".into(),
                    ));
                }
                let m = free_sites.len();
                let mut out = DMatrix::zeros(m, m);
                for (ai, &i) in free_sites.iter().enumerate() {
                    for (aj, &j) in free_sites.iter().enumerate().skip(ai) {
                        let v = cov[(i, j)] - cov[(i, s0)] * cov[(j, s0)] / c00;
                        out[(ai, aj)] = v;
                        out[(aj, ai)] = v;
                    }
                }
                out
            }
        };
        let variances = (0..free_sites.len()).map(|i| reduced[(i, i)]).collect();
        let factor = SpdFactor::new(&reduced, sigma2)?;
        Ok(ConstrainedFieldSampler {
            n_sites: n,
            constraint,
            free_sites,
            factor,
            variances,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn constraint(&self) -> Option<usize> {
        self.constraint
    }

    /// Marginal variance of the field at a site (0 at the constrained site).
    pub fn variance(&self, site: usize) -> f64 {
        if Some(site) == self.constraint {
            return 0.0;
        }
        let pos = self
            .free_sites
            .iter()
            .position(|&s| s == site)
            .expect("site index in range");
        self.variances[pos]
    }

    /// One draw of the field over all sites.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.free_sites.len();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = self.factor.mul_lower(&z);
        let mut field = vec![0.0; self.n_sites];
        for (k, &s) in self.free_sites.iter().enumerate() {
            field[s] = y[k];
        }
        field
    }

    /// One draw of b(s) * Z(s) for a nonnegative scale function b.
    pub fn sample_scaled<R: Rng + ?Sized>(&self, scale: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if scale.len() != self.n_sites {
            return Err(Error::InvalidInput(format!(
                "scale has {} entries, expected {}",
                scale.len(),
                self.n_sites
            )));
        }
        if scale.iter().any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "scale values must be nonnegative and finite".into(),
            ));
        }
        let mut field = self.sample(rng);
        for (v, &b) in field.iter_mut().zip(scale) {
            *v *= b;
        }
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn correlation_is_one_at_zero() {
        let p = MaternParams::new(1.2, 7.0, 1.0).unwrap();
        assert_eq!(matern_correlation(0.0, &p), 1.0);
    }

    #[test]
    fn exponential_closed_form_at_nu_half() {
        // nu = 0.5 reduces to exp(-kappa d) with kappa = 2 / rho.
        let p = MaternParams::new(0.5, 10.0, 1.0).unwrap();
        assert_relative_eq!(
            matern_correlation(5.0, &p),
            (-1.0f64).exp(),
            epsilon = 1e-12
        );
        for k in 1..=100 {
            let d = 0.37 * k as f64;
            let expected = (-p.kappa() * d).exp();
            assert!(
                (matern_correlation(d, &p) - expected).abs() < 1e-10,
                "d = {d}"
            );
        }
    }

    #[test]
    fn three_halves_closed_form() {
        // nu = 1.5: gamma(d) = (1 + kappa d) exp(-kappa d).
        let p = MaternParams::new(1.5, 12.0, 1.0).unwrap();
        let kappa = p.kappa();
        let d = 1.0 / kappa; // kappa d = 1
        assert_relative_eq!(
            matern_correlation(d, &p),
            2.0 * (-1.0f64).exp(),
            epsilon = 1e-8
        );
        for k in 1..=100 {
            let d = 0.21 * k as f64;
            let x = kappa * d;
            let expected = (1.0 + x) * (-x).exp();
            assert!(
                (matern_correlation(d, &p) - expected).abs() < 1e-8,
                "d = {d}"
            );
        }
    }

    #[test]
    fn correlation_strictly_decreasing() {
        let p = MaternParams::new(0.8, 9.0, 1.0).unwrap();
        let mut prev = 1.0;
        for k in 1..60 {
            let v = matern_correlation(0.5 * k as f64, &p);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn huge_distance_underflows_to_zero() {
        let p = MaternParams::new(0.5, 1.0, 1.0).unwrap();
        assert_eq!(matern_correlation(1e5, &p), 0.0);
    }

    #[test]
    fn covariance_is_bitwise_symmetric() {
        let g = GridGeometry::new(4, 3, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(1.5, 5.0, 2.0).unwrap();
        let c = covariance_matrix(&g, &p);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(c[(i, j)].to_bits(), c[(j, i)].to_bits());
            }
        }
    }

    #[test]
    fn unconstrained_single_site_variance() {
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 10.0, 2.0).unwrap();
        let sampler = ConstrainedFieldSampler::build(&g, &p, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)[0]).collect();
        let var = stats::sd(&draws).powi(2);
        assert!((var - 4.0).abs() < 0.2, "var = {var}");
    }

    #[test]
    fn constrained_site_is_exactly_zero() {
        let g = GridGeometry::new(3, 3, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 4.0, 1.5).unwrap();
        let sampler = ConstrainedFieldSampler::build(&g, &p, Some(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let f = sampler.sample(&mut rng);
            assert_eq!(f[4], 0.0);
        }
    }

    #[test]
    fn constrained_adjacent_variance_matches_schur() {
        let g = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 6.0, 1.3).unwrap();
        let sampler = ConstrainedFieldSampler::build(&g, &p, Some(0)).unwrap();
        let gamma = matern_correlation(1.0, &p);
        let expected = p.sigma * p.sigma * (1.0 - gamma * gamma);
        assert_relative_eq!(sampler.variance(1), expected, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng)[1]).collect();
        let var = stats::sd(&draws).powi(2);
        assert!(
            (var - expected).abs() < 0.05 * expected,
            "var {var} expected {expected}"
        );
    }

    #[test]
    fn sample_mean_near_zero() {
        let g = GridGeometry::new(2, 2, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 5.0, 1.0).unwrap();
        let sampler = ConstrainedFieldSampler::build(&g, &p, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sums = [0.0f64; 4];
        for _ in 0..n {
            let f = sampler.sample(&mut rng);
            for (acc, v) in sums.iter_mut().zip(&f) {
                *acc += v;
            }
        }
        let bound = 4.0 / (n as f64).sqrt();
        for acc in sums {
            let mean = acc / n as f64;
            assert!(mean.abs() < bound, "mean {mean} vs {bound}");
        }
    }

    #[test]
    fn scaled_sampling_behaviour() {
        let g = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 5.0, 1.0).unwrap();
        let sampler = ConstrainedFieldSampler::build(&g, &p, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // zero scale -> zero field
        let f = sampler.sample_scaled(&[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
        // negative scale -> error
        assert!(sampler.sample_scaled(&[1.0, -0.5], &mut rng).is_err());
        // scale 2 at a site quadruples the variance there
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sampler.sample_scaled(&[2.0, 1.0], &mut rng).unwrap()[0])
            .collect();
        let var = stats::sd(&draws).powi(2);
        assert!((var - 4.0).abs() < 0.2, "var {var}");
    }

    #[test]
    fn constrained_covariance_row_at_s0_is_zero() {
        let g = GridGeometry::new(3, 1, 1.0, (0.0, 0.0)).unwrap();
        let p = MaternParams::new(0.5, 3.0, 1.0).unwrap();
        let cov = covariance_matrix(&g, &p);
        let s0 = 1usize;
        let c00 = cov[(s0, s0)];
        for j in 0..3 {
            let v = cov[(s0, j)] - cov[(s0, s0)] * cov[(j, s0)] / c00;
            assert_relative_eq!(v, 0.0, epsilon = 1e-15);
        }
    }
}
