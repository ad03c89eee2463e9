//! Probability integral transforms between the intensity scale and standard
//! Laplace margins, plus the Laplace-scale threshold.

use crate::cube::{PrecipCube, TimeStamp};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::margins::MarginalModel;
use serde::{Deserialize, Serialize};

/// CDF of the standard Laplace distribution (location 0, scale 1).
pub fn laplace_cdf(x: f64) -> f64 {
    if x < 0.0 {
        0.5 * x.exp()
    } else {
        1.0 - 0.5 * (-x).exp()
    }
}

/// Quantile of the standard Laplace distribution; exact closed form.
pub fn laplace_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "laplace quantile requires p in (0,1)");
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}

/// Laplace-scale threshold for a chosen upper-tail probability.
///
/// Restricted to p > 0.5 so that tau >= 0, which the exponential upper-tail
/// identity used by the simulation engine relies on.
pub fn threshold_on_laplace(p_tau: f64) -> Result<f64> {
    if !(p_tau > 0.5 && p_tau < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold probability must lie in (0.5, 1); got {p_tau}"
        )));
    }
    Ok(laplace_quantile(p_tau))
}

/// Bound used when clamping extreme marginal CDF values before the
/// Laplace quantile transform.
pub const CDF_CLAMP: f64 = 1e-12;

/// Space-time field on the standard-Laplace scale wherever intensity was
/// observed; NaN marks dry or missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCube {
    pub geometry: GridGeometry,
    pub times: Vec<TimeStamp>,
    /// Time-major values, NaN = no intensity observation.
    pub values: Vec<f64>,
    pub site_mask: Vec<bool>,
    /// How many CDF values hit the clamp during the forward transform.
    pub clamp_count: usize,
}

impl LaplaceCube {
    pub fn n_sites(&self) -> usize {
        self.geometry.n_sites()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn raw(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.n_sites() + s]
    }

    pub fn value(&self, t: usize, s: usize) -> Option<f64> {
        if !self.site_mask[s] {
            return None;
        }
        let v = self.raw(t, s);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn field(&self, t: usize) -> &[f64] {
        let s = self.n_sites();
        &self.values[t * s..(t + 1) * s]
    }
}

/// Transform an intensity cube to Laplace margins through the fitted
/// marginal model: y = F_L^{-1}(F+_{s,t}(x)).
///
/// CDF values indistinguishable from 0 or 1 in floating point are clamped to
/// [CDF_CLAMP, 1 - CDF_CLAMP]; the count of clamps is recorded on the output.
pub fn to_laplace(intensity: &PrecipCube, model: &MarginalModel) -> Result<LaplaceCube> {
    for stamp in intensity.times() {
        if !model.covers_day(stamp.day) {
            return Err(Error::InvalidInput(format!(
                "marginal model does not cover day {}",
                stamp.day
            )));
        }
    }
    let s = intensity.n_sites();
    let mut values = vec![f64::NAN; s * intensity.n_times()];
    let mut clamp_count = 0usize;
    for (t, stamp) in intensity.times().iter().enumerate() {
        for site in 0..s {
            if let Some(x) = intensity.value(t, site) {
                if x <= 0.0 {
                    continue; // zeros live in the occurrence process
                }
                let mut p = model.cdf(x, stamp.day)?;
                if p < CDF_CLAMP {
                    p = CDF_CLAMP;
                    clamp_count += 1;
                } else if p > 1.0 - CDF_CLAMP {
                    p = 1.0 - CDF_CLAMP;
                    clamp_count += 1;
                }
                values[t * s + site] = laplace_quantile(p);
            }
        }
    }
    Ok(LaplaceCube {
        geometry: intensity.geometry().clone(),
        times: intensity.times().to_vec(),
        values,
        site_mask: intensity.site_mask().to_vec(),
        clamp_count,
    })
}

/// Inverse transform back to the intensity scale.
pub fn from_laplace(cube: &LaplaceCube, model: &MarginalModel) -> Result<PrecipCube> {
    let s = cube.n_sites();
    let mut values = vec![f64::NAN; s * cube.n_times()];
    for (t, stamp) in cube.times.iter().enumerate() {
        for site in 0..s {
            let y = cube.raw(t, site);
            if y.is_nan() {
                continue;
            }
            let p = laplace_cdf(y).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
            values[t * s + site] = model.quantile(p, stamp.day)?;
        }
    }
    PrecipCube::new(
        cube.geometry.clone(),
        cube.times.clone(),
        values,
        cube.site_mask.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::hourly_times;
    use crate::margins::TemporalTrack;
    use crate::stats::ks_distance;
    use approx::assert_relative_eq;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_model(days: usize) -> MarginalModel {
        MarginalModel::new(
            TemporalTrack::new(0, vec![2.0f64.ln(); days], 14.0, 1.0).unwrap(),
            0.69,
            TemporalTrack::new(0, vec![0.0; days], 14.0, 1.0).unwrap(),
            0.145,
            0.95,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn quantile_closed_forms() {
        assert_relative_eq!(laplace_quantile(0.5), 0.0);
        assert_relative_eq!(laplace_quantile(0.9), 5.0f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(laplace_quantile(0.1), -(5.0f64.ln()), epsilon = 1e-14);
    }

    #[test]
    fn cdf_quantile_round_trip() {
        for k in 1..1000 {
            let p = k as f64 / 1000.0;
            assert!((laplace_cdf(laplace_quantile(p)) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(threshold_on_laplace(0.9).unwrap(), 5.0f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(
            threshold_on_laplace(0.99).unwrap(),
            -(0.02f64.ln()),
            epsilon = 1e-12
        );
        assert!(threshold_on_laplace(0.5).is_err());
        assert!(threshold_on_laplace(0.3).is_err());
    }

    fn synthetic_intensity_cube(n_hours: usize, seed: u64, model: &MarginalModel) -> PrecipCube {
        let g = GridGeometry::new(2, 1, 1.0, (0.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = hourly_times(n_hours, 7);
        let mut values = Vec::with_capacity(n_hours * 2);
        for ts in &times {
            for _ in 0..2 {
                let p: f64 = rng.random_range(1e-9..1.0 - 1e-9);
                values.push(model.quantile(p, ts.day).unwrap());
            }
        }
        PrecipCube::new(g, times, values, vec![true; 2]).unwrap()
    }

    #[test]
    fn median_maps_to_zero() {
        let model = test_model(1);
        let x = model.quantile(0.5, 0).unwrap();
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube = PrecipCube::new(g, hourly_times(1, 7), vec![x], vec![true]).unwrap();
        let lap = to_laplace(&cube, &model).unwrap();
        assert!(lap.raw(0, 0).abs() < 1e-9);
    }

    #[test]
    fn round_trip_recovers_intensities() {
        let model = test_model(3);
        let cube = synthetic_intensity_cube(60, 3, &model);
        let lap = to_laplace(&cube, &model).unwrap();
        let back = from_laplace(&lap, &model).unwrap();
        for t in 0..cube.n_times() {
            for s in 0..cube.n_sites() {
                let a = cube.raw(t, s);
                let b = back.raw(t, s);
                assert!(
                    (a - b).abs() <= 1e-6 * a.abs(),
                    "t {t} s {s}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn pooled_laplace_values_pass_ks() {
        let model = test_model(2084); // 50_000 hours of 2 sites = 1e5 values
        let cube = synthetic_intensity_cube(50_000, 4, &model);
        let lap = to_laplace(&cube, &model).unwrap();
        let pooled: Vec<f64> = lap.values.iter().copied().filter(|v| !v.is_nan()).collect();
        assert_eq!(pooled.len(), 100_000);
        let d = ks_distance(&pooled, laplace_cdf);
        let crit = 1.63 / (pooled.len() as f64).sqrt();
        assert!(d < crit, "KS {d} vs {crit}");
    }

    #[test]
    fn monotonicity_within_day() {
        let model = test_model(1);
        let xs = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
        let g = GridGeometry::new(6, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube =
            PrecipCube::new(g, hourly_times(1, 7), xs.to_vec(), vec![true; 6]).unwrap();
        let lap = to_laplace(&cube, &model).unwrap();
        for i in 1..6 {
            assert!(lap.raw(0, i) > lap.raw(0, i - 1));
        }
    }

    #[test]
    fn exceedance_correspondence() {
        // X(s0) > marginal_quantile(p_tau) iff Y(s0) > laplace threshold.
        let model = test_model(1);
        let p_tau = 0.9;
        let tau = threshold_on_laplace(p_tau).unwrap();
        let x_tau = model.quantile(p_tau, 0).unwrap();
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        for &mult in &[0.5, 0.99, 1.0, 1.01, 3.0] {
            let x = x_tau * mult;
            let cube =
                PrecipCube::new(g.clone(), hourly_times(1, 7), vec![x], vec![true]).unwrap();
            let lap = to_laplace(&cube, &model).unwrap();
            let y = lap.raw(0, 0);
            assert_eq!(x > x_tau, y > tau, "mult {mult}: x {x} y {y} tau {tau}");
        }
    }

    #[test]
    fn clamping_counts_extreme_values() {
        let model = test_model(1);
        // An absurdly large intensity forces the CDF against 1.
        let g = GridGeometry::new(1, 1, 1.0, (0.0, 0.0)).unwrap();
        let cube =
            PrecipCube::new(g, hourly_times(1, 7), vec![1e12], vec![true]).unwrap();
        let lap = to_laplace(&cube, &model).unwrap();
        assert_eq!(lap.clamp_count, 1);
        assert!(lap.raw(0, 0) <= laplace_quantile(1.0 - CDF_CLAMP));
    }
}
