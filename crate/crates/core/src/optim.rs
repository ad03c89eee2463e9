//! Unconstrained optimizers: limited-memory BFGS with backtracking line
//! search for smooth objectives, and Nelder-Mead for noisy or
//! derivative-free ones. Both minimize.

use crate::error::{Error, Result};

/// Objective with (optionally cheaper) value-only evaluation.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;

    /// Returns the value and fills `grad`.
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Wraps a closure computing value and gradient together.
pub struct FnObjective<F: FnMut(&[f64], Option<&mut [f64]>) -> f64>(pub F);

impl<F: FnMut(&[f64], Option<&mut [f64]>) -> f64> Objective for FnObjective<F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.0)(x, None)
    }
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.0)(x, Some(grad))
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Converged when ||grad||_2 / max(1, |f|) falls below this.
    pub scaled_gradient_tolerance: f64,
    /// Also stop when the relative objective decrease stalls below this for
    /// a few consecutive iterations.
    pub f_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 500,
            scaled_gradient_tolerance: 1e-6,
            f_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_evaluations: usize,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with Armijo backtracking. Returns an error only when the starting
/// point is not finite; hitting the iteration cap reports `converged = false`
/// so callers can decide whether that is fatal.
pub fn lbfgs<O: Objective>(obj: &mut O, x0: &[f64], opts: &LbfgsOptions) -> Result<OptimResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut f = obj.value_grad(&x, &mut grad);
    let mut evals = 1usize;
    if !f.is_finite() {
        return Err(Error::InvalidInput(
            "objective is not finite at the starting point".into(),
        ));
    }

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut stall = 0usize;

    for iter in 0..opts.max_iterations {
        let gnorm = norm2(&grad);
        if gnorm / f.abs().max(1.0) < opts.scaled_gradient_tolerance {
            return Ok(OptimResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter,
                converged: true,
                n_evaluations: evals,
            });
        }

        // Two-loop recursion.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * y;
            }
        }
        if k > 0 {
            let last = k - 1;
            let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * s;
            }
        }
        let mut descent = dot(&grad, &dir);
        if !(descent < 0.0) {
            // Fall back to steepest descent.
            dir = grad.iter().map(|g| -g).collect();
            descent = -gnorm * gnorm;
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Weak-Wolfe line search (bisection with doubling). The curvature
        // condition keeps s.y positive so the quasi-Newton pairs stay usable.
        let c1 = 1e-4;
        let c2 = 0.9;
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut t = 1.0f64;
        let mut x_new = vec![0.0; n];
        let mut grad_new = vec![0.0; n];
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        // Best point satisfying Armijo alone, kept as a fallback.
        let mut armijo_best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * dir[i];
            }
            f_new = obj.value_grad(&x_new, &mut grad_new);
            evals += 1;
            if !f_new.is_finite() || f_new > f + c1 * t * descent {
                hi = t;
            } else if dot(&grad_new, &dir) < c2 * descent {
                lo = t;
                if armijo_best.as_ref().map(|(_, _, fb)| f_new < *fb).unwrap_or(true) {
                    armijo_best = Some((x_new.clone(), grad_new.clone(), f_new));
                }
            } else {
                accepted = true;
                break;
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
            if t <= 1e-20 || (hi.is_finite() && hi - lo < 1e-16 * hi.max(1.0)) {
                break;
            }
        }
        if !accepted {
            if let Some((xa, ga, fa)) = armijo_best {
                x_new = xa;
                grad_new = ga;
                f_new = fa;
            } else {
                // No progress possible along this direction at machine precision.
                return Ok(OptimResult {
                    x,
                    f,
                    grad_norm: gnorm,
                    iterations: iter,
                    converged: gnorm / f.abs().max(1.0) < 1e-3,
                    n_evaluations: evals,
                });
            }
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * norm2(&s) * norm2(&yv) {
            s_hist.push(s);
            y_hist.push(yv);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }

        let rel_drop = (f - f_new) / f.abs().max(1.0);
        if rel_drop < opts.f_tolerance {
            stall += 1;
        } else {
            stall = 0;
        }
        x = x_new;
        f = f_new;
        grad = grad_new;
        if stall >= 3 {
            let gnorm = norm2(&grad);
            return Ok(OptimResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter + 1,
                converged: true,
                n_evaluations: evals,
            });
        }
    }
    let gnorm = norm2(&grad);
    Ok(OptimResult {
        x,
        f,
        grad_norm: gnorm,
        iterations: opts.max_iterations,
        converged: false,
        n_evaluations: evals,
    })
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    pub f_tolerance: f64,
    pub x_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iterations: 2000,
            f_tolerance: 1e-10,
            x_tolerance: 1e-8,
        }
    }
}

/// Nelder-Mead simplex minimization; `scale` sets the initial simplex size
/// per coordinate.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    scale: &[f64],
    opts: &NelderMeadOptions,
) -> OptimResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    for iter in 0..opts.max_iterations {
        iterations = iter;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = values[worst] - values[best];
        let x_spread = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() < opts.f_tolerance * values[best].abs().max(1.0)
            && x_spread < opts.x_tolerance
        {
            return OptimResult {
                x: simplex[best].clone(),
                f: values[best],
                grad_norm: f64::NAN,
                iterations: iter,
                converged: true,
                n_evaluations: evals,
            };
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for (c, a) in centroid.iter_mut().zip(v) {
                *c += a / n as f64;
            }
        }
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_r = f(&reflect);
        evals += 1;
        if f_r < values[best] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let f_e = f(&expand);
            evals += 1;
            if f_e < f_r {
                simplex[worst] = expand;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflect;
                values[worst] = f_r;
            }
        } else if f_r < values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = f_r;
        } else {
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + rho * (w - c))
                .collect();
            let f_c = f(&contract);
            evals += 1;
            if f_c < values[worst] {
                simplex[worst] = contract;
                values[worst] = f_c;
            } else {
                // Shrink toward the best vertex.
                let best_point = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i == best {
                        continue;
                    }
                    for (a, b) in v.iter_mut().zip(&best_point) {
                        *a = b + sigma * (*a - b);
                    }
                    values[i] = f(v);
                    evals += 1;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    OptimResult {
        x: simplex[order[0]].clone(),
        f: values[order[0]],
        grad_norm: f64::NAN,
        iterations,
        converged: false,
        n_evaluations: evals,
    }
}

/// Central finite-difference gradient, for tests and cross-checks.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
