//! Dense symmetric-positive-definite helpers on top of nalgebra.
//!
//! The conditional-extremes likelihood factorizes hundreds of moderate
//! covariance matrices per objective evaluation, so the explicit inverse is
//! computed with a triangular inversion followed by a triangularity-aware
//! S^T S product instead of nalgebra's generic path.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Jitter escalation ladder, multiplicative on the reference variance.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    n: usize,
}

impl SpdFactor {
    /// Cholesky factorization with diagonal jitter escalation.
    ///
    /// `sigma2` is the reference variance the jitter scales with; each failed
    /// attempt retries with the next rung of the ladder added to the diagonal.
    pub fn new(mat: &DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let n = mat.nrows();
        for &jit in &JITTER_LADDER {
            let mut m = mat.clone();
            if jit > 0.0 {
                for i in 0..n {
                    m[(i, i)] += jit * sigma2;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(SpdFactor { chol, jitter: jit, n });
            }
        }
        let last = *JITTER_LADDER.last().unwrap();
        Err(Error::Factorization {
            smallest_eigenvalue: estimate_smallest_eigenvalue(mat),
            jitter: last,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        let mut s = 0.0;
        for i in 0..self.n {
            s += l[(i, i)].ln();
        }
        2.0 * s
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Lower-triangular factor as an owned matrix (upper part zeroed).
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// y = L z, using only the lower triangle.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = self.n;
        let mut y = DVector::zeros(n);
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            let col = l.column(j);
            for i in j..n {
                y[i] += col[i] * zj;
            }
        }
        y
    }

    /// y = L^T v, using only the lower triangle.
    pub fn tr_mul_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = self.n;
        let mut y = DVector::zeros(n);
        for j in 0..n {
            let col = l.column(j);
            let mut acc = 0.0;
            for i in j..n {
                acc += col[i] * v[i];
            }
            y[j] = acc;
        }
        y
    }

    /// Explicit inverse of the factored matrix via S = L^{-1}, A = S^T S.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut s = self.chol.l();
        invert_lower_triangular(&mut s);
        lower_transpose_times_self(&s)
    }
}

/// In-place inverse of a lower-triangular matrix.
fn invert_lower_triangular(l: &mut DMatrix<f64>) {
    let n = l.nrows();
    // Column-oriented forward substitution; matrix is column-major so the
    // inner updates walk contiguous memory.
    for j in 0..n {
        let djj = 1.0 / l[(j, j)];
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            // s_ij = -(1/l_ii) * sum_{k=j..i-1} l_ik s_kj
            let mut acc = 0.0;
            for k in j..i {
                acc += l[(i, k)] * l[(k, j)];
            }
            l[(i, j)] = -acc / l[(i, i)];
        }
    }
}

/// A = S^T S for lower-triangular S, exploiting the sparsity pattern.
fn lower_transpose_times_self(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let mut a = DMatrix::zeros(n, n);
    let data = s.as_slice();
    for j in 0..n {
        let col_j = &data[j * n..(j + 1) * n];
        for i in 0..=j {
            let col_i = &data[i * n..(i + 1) * n];
            // Both columns are zero above their diagonal; overlap starts at j.
            let v = dot_from(col_i, col_j, j);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Dot product of a[k..] and b[k..], unrolled four-wide for throughput.
fn dot_from(a: &[f64], b: &[f64], k: usize) -> f64 {
    let a = &a[k..];
    let b = &b[k..];
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Crude smallest-eigenvalue estimate via power iteration on a spectral shift;
/// only used to annotate factorization failures.
fn estimate_smallest_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let n = mat.nrows();
    if n == 0 {
        return 0.0;
    }
    // Gershgorin upper bound on the spectrum.
    let mut upper = f64::NEG_INFINITY;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += mat[(i, j)].abs();
        }
        upper = upper.max(row);
    }
    // Power iteration on (upper * I - M): its top eigenvalue is upper - lambda_min.
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for it in 0..60 {
        let mut w = mat * &v;
        w = &v * upper - w;
        let norm = w.norm();
        if norm == 0.0 {
            return upper;
        }
        w /= norm;
        if it == 59 {
            let mw = upper * &w - mat * &w;
            lambda = w.dot(&mw);
        }
        v = w;
    }
    upper - lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn inverse_matches_nalgebra() {
        let m = random_spd(40, 7);
        let f = SpdFactor::new(&m, 1.0).unwrap();
        let inv = f.inverse();
        let expected = m.clone().try_inverse().unwrap();
        for i in 0..40 {
            for j in 0..40 {
                assert_relative_eq!(inv[(i, j)], expected[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn log_det_matches_lu() {
        let m = random_spd(25, 3);
        let f = SpdFactor::new(&m, 1.0).unwrap();
        let lu_det = m.determinant();
        assert_relative_eq!(f.log_det(), lu_det.ln(), epsilon = 1e-9);
    }

    #[test]
    fn solve_round_trip() {
        let m = random_spd(30, 11);
        let f = SpdFactor::new(&m, 1.0).unwrap();
        let b = DVector::from_fn(30, |i, _| (i as f64).sin());
        let x = f.solve(&b);
        let back = &m * &x;
        for i in 0..30 {
            assert_relative_eq!(back[i], b[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn mul_lower_agrees_with_full_product() {
        let m = random_spd(20, 5);
        let f = SpdFactor::new(&m, 1.0).unwrap();
        let z = DVector::from_fn(20, |i, _| (i as f64 * 0.7).cos());
        let via_method = f.mul_lower(&z);
        let via_matrix = f.l() * &z;
        for i in 0..20 {
            assert_relative_eq!(via_method[i], via_matrix[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn jitter_rescues_near_singular_matrix() {
        // Rank-deficient plus a hair of noise: raw factorization can fail,
        // the ladder must find a rung before giving up.
        let n = 12;
        let one = DVector::from_element(n, 1.0);
        let m = &one * one.transpose();
        let f = SpdFactor::new(&m, 1.0);
        match f {
            Ok(f) => assert!(f.jitter() > 0.0),
            Err(Error::Factorization { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn failure_reports_smallest_eigenvalue() {
        let mut m = DMatrix::identity(6, 6);
        m[(0, 0)] = -2.0;
        let err = SpdFactor::new(&m, 1.0).unwrap_err();
        match err {
            Error::Factorization {
                smallest_eigenvalue,
                ..
            } => assert!(smallest_eigenvalue < -1.0, "est {smallest_eigenvalue}"),
            e => panic!("unexpected error {e}"),
        }
    }
}
