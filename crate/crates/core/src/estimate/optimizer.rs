//! BFGS quasi-Newton minimization with backtracking line search.

use log::{debug, trace};
use nalgebra::{DMatrix, DVector};

use super::numdiff;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    /// Max-norm of the gradient at convergence.
    pub gradient_tol: f64,
    /// Relative change of the objective at convergence.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            gradient_tol: 1e-6,
            f_tol: 1e-10,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Evaluations that returned a non-finite value (infeasible points).
    pub infeasible: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const MIN_STEP_SCALE: f64 = 1e-3;

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Minimizes `f` from `x0` using a numerical central-difference gradient.
///
/// The gradient uses [`numdiff::gradient_step`]; when the line search stalls
/// the step is shrunk tenfold, at most three times.
///
/// Non-finite objective values mark infeasible points; the line search backs
/// off from them.
pub fn minimize<F>(f: &F, x0: &[f64], options: &OptimizerOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let infeasible = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        let v = f(x);
        if !v.is_finite() {
            infeasible.set(infeasible.get() + 1);
            f64::INFINITY
        } else {
            v
        }
    };

    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(x.as_slice());
    let done = |x: DVector<f64>, f: f64, converged, iterations, g: f64| Minimum {
        x: x.as_slice().to_vec(),
        f,
        converged,
        iterations,
        gradient_norm: g,
        infeasible: infeasible.get(),
    };
    if !fx.is_finite() || n == 0 {
        let ok = n == 0 && fx.is_finite();
        return done(x, fx, ok, 0, if ok { 0.0 } else { f64::INFINITY });
    }

    let mut step_scale = 1.0;
    let mut g = DVector::from_vec(numdiff::gradient(&eval, x.as_slice(), step_scale));
    let mut gnorm = max_norm(g.as_slice());
    if gnorm <= options.gradient_tol {
        return done(x, fx, true, 0, gnorm);
    }
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;

    for iter in 1..=options.max_iter {
        let mut d = -(&h_inv * &g);
        let mut slope = g.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            d = -g.clone();
            slope = g.dot(&d);
        }
        // keep the very first steepest-descent step moderate
        let mut alpha = if fresh {
            (1.0 / max_norm(d.as_slice())).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial = &x + &d * alpha;
            let ft = eval(trial.as_slice());
            if trial == x {
                break;
            }
            if ft.is_finite() && ft < fx && ft <= fx + ARMIJO * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            if step_scale > MIN_STEP_SCALE {
                // truncation error of the difference quotient can dominate a
                // small gradient in strongly curved directions
                step_scale *= 0.1;
                debug!("line search failed at iteration {iter}; refining gradient step to {step_scale:e}");
                g = DVector::from_vec(numdiff::gradient(&eval, x.as_slice(), step_scale));
                gnorm = max_norm(g.as_slice());
                continue;
            }
            if !fresh {
                debug!("line search failed at iteration {iter}; restarting from steepest descent");
                h_inv = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            debug!("line search failed at iteration {iter} along steepest descent");
            let converged = gnorm <= options.gradient_tol;
            return done(x, fx, converged, iter, gnorm);
        };

        let g_new = DVector::from_vec(numdiff::gradient(&eval, x_new.as_slice(), step_scale));
        if g_new.iter().any(|v| !v.is_finite()) {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            x = x_new;
            fx = f_new;
            g = g_new.map(|v| if v.is_finite() { v } else { 0.0 });
            gnorm = max_norm(g.as_slice());
            continue;
        }
        let s = &x_new - &x;
        let y = &g_new - &g;
        let df = (fx - f_new).abs();

        x = x_new;
        let f_prev = fx;
        fx = f_new;
        g = g_new;
        gnorm = max_norm(g.as_slice());
        trace!("iter {iter}: f = {fx:.12e}, |g| = {gnorm:.3e}, step = {alpha:.3e}");

        if gnorm <= options.gradient_tol && df <= options.f_tol * f_prev.abs().max(1.0) {
            return done(x, fx, true, iter, gnorm);
        }

        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() && sy > 0.0 {
            if fresh {
                let yy = y.dot(&y);
                h_inv = DMatrix::identity(n, n) * (sy / yy);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        } else {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
        }
    }
    let converged = gnorm <= options.gradient_tol;
    done(x, fx, converged, options.max_iter, gnorm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(&f, &[-1.2, 1.0], &OptimizerOptions::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_barrier() {
        // minimum at the boundary side x > 0
        let f = |x: &[f64]| {
            if x[0] <= 0.0 {
                f64::INFINITY
            } else {
                x[0] - x[0].ln()
            }
        };
        let m = minimize(&f, &[5.0], &OptimizerOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start() {
        let f = |_: &[f64]| f64::NAN;
        let m = minimize(&f, &[1.0], &OptimizerOptions::default());
        assert!(!m.converged);
    }

    #[test]
    fn iteration_cap() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = OptimizerOptions {
            max_iter: 3,
            ..Default::default()
        };
        let m = minimize(&f, &[-1.2, 1.0], &opts);
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }
}
