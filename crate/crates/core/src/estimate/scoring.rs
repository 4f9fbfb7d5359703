//! Fisher-scoring refinement of the quasi-Newton end point.
//!
//! Works with ∂Σ/∂θ rather than differences of F, so it stays accurate where
//! the discrepancy is too flat for a difference quotient to resolve.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::{numdiff, Estimator, Objective};

pub(crate) struct Polished {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Gradient of F and expected information at `x`, from a central-difference
/// Jacobian of Σ.
fn score(objective: &Objective, s: &DMatrix<f64>, estimator: Estimator, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let k = x.len();
    let sigma = objective.structure.implied(&objective.expand(x)).ok()?.sigma;
    let weight = match estimator {
        Estimator::Ml => sigma.clone().cholesky()?.inverse(),
        Estimator::Gls => s.clone().cholesky()?.inverse(),
    };
    let mut xp = x.to_vec();
    let mut jac = Vec::with_capacity(k);
    for i in 0..k {
        let h = numdiff::gradient_step(x[i]);
        xp[i] = x[i] + h;
        let up = objective.structure.implied(&objective.expand(&xp)).ok()?.sigma;
        xp[i] = x[i] - h;
        let down = objective.structure.implied(&objective.expand(&xp)).ok()?.sigma;
        xp[i] = x[i];
        jac.push((up - down) / (2.0 * h));
    }
    // dF = tr(W (Σ − S) W dΣ) with W = Σ⁻¹ (ML) or S⁻¹ (GLS); the expected
    // second derivative is tr(W dΣᵢ W dΣⱼ)
    let resid = &weight * (&sigma - s) * &weight;
    let wj: Vec<DMatrix<f64>> = jac.iter().map(|j| &weight * j).collect();
    let grad = DVector::from_fn(k, |i, _| (&resid * &jac[i]).trace());
    let info = DMatrix::from_fn(k, k, |i, l| (&wj[i] * &wj[l]).trace());
    Some((grad, info))
}

pub(crate) fn polish(
    objective: &Objective,
    s: &DMatrix<f64>,
    estimator: Estimator,
    x0: &[f64],
    gradient_tol: f64,
    f_tol: f64,
    max_iter: usize,
) -> Option<Polished> {
    let f = |x: &[f64]| objective.value(x);
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return None;
    }
    let (mut g, mut info) = score(objective, s, estimator, x.as_slice())?;
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        let ridge = 1e-12 * info.diagonal().amax().max(1e-300);
        let step = (&info + DMatrix::identity(x.len(), x.len()) * ridge)
            .cholesky()?
            .solve(&(-&g));
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &x + &step * alpha;
            let ft = f(trial.as_slice());
            if ft.is_finite() && ft <= fx {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else { break };
        if x_new == x {
            break;
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        (g, info) = score(objective, s, estimator, x.as_slice())?;
        debug!("scoring iteration {iter}: F = {fx:.6e}, |g| = {:.3e}", g.amax());
        // keep going past the gradient tolerance while F still falls
        if g.amax() <= gradient_tol && decrease <= f_tol * fx.abs().max(1.0) {
            break;
        }
    }
    let gnorm = g.amax();
    (gnorm <= gradient_tol).then(|| Polished {
        x: x.as_slice().to_vec(),
        f: fx,
        gradient_norm: gnorm,
        iterations,
    })
}
