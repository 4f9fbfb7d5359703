//! Central finite differences for gradients and Hessians.

use nalgebra::DMatrix;
use rayon::prelude::*;

/// Gradient step per coordinate: max(1e-6, 1e-6·|x|).
pub fn gradient_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Hessian step per coordinate: 1e-4·max(1, |x|).
pub fn hessian_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Central-difference gradient with per-coordinate steps `step(x_i) * scale`.
///
/// Falls back to a one-sided difference when one side is infeasible (non-finite).
pub fn gradient<F>(f: &F, x: &[f64], scale: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let f0 = f(x);
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = gradient_step(x[i]) * scale;
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - f0) / h,
                (false, true) => (f0 - fm) / h,
                (false, false) => f64::NAN,
            }
        })
        .collect()
}

/// Numerical Hessian from second-order central differences.
///
/// Each column is an independent set of evaluations; with `threads > 1`
/// columns are computed concurrently. Entry (i, j) and (j, i) are evaluated
/// separately, so the result is not symmetrized here.
pub fn hessian<F>(f: &F, x: &[f64], threads: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|&v| hessian_step(v)).collect();

    let column = |j: usize| -> Vec<f64> {
        let mut xp = x.to_vec();
        let at = |xp: &mut Vec<f64>, di: f64, dj: f64, i: usize| {
            xp[i] += di;
            xp[j] += dj;
            let v = f(xp);
            xp[i] = x[i];
            xp[j] = x[j];
            v
        };
        (0..n)
            .map(|i| {
                let (hi, hj) = (steps[i], steps[j]);
                if i == j {
                    let fp = at(&mut xp, 0.0, hj, i);
                    let fm = at(&mut xp, 0.0, -hj, i);
                    (fp - 2.0 * f0 + fm) / (hj * hj)
                } else {
                    let pp = at(&mut xp, hi, hj, i);
                    let pm = at(&mut xp, hi, -hj, i);
                    let mp = at(&mut xp, -hi, hj, i);
                    let mm = at(&mut xp, -hi, -hj, i);
                    (pp - pm - mp + mm) / (4.0 * hi * hj)
                }
            })
            .collect()
    };

    let columns: Vec<Vec<f64>> = if threads > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(column).collect()),
            Err(_) => (0..n).map(column).collect(),
        }
    } else {
        (0..n).map(column).collect()
    };
    DMatrix::from_fn(n, n, |i, j| columns[j][i])
}
