//! Small factorization helpers shared by the model evaluation code.

use nalgebra::{Cholesky, DMatrix, Dyn, LU};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// LU factorization that rejects (numerically) singular matrices: a pivot
/// below `SINGULAR_TOL` times the largest pivot magnitude.
pub fn lu_checked(m: &DMatrix<f64>, what: &str) -> Result<LU<f64, Dyn, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what.to_string()));
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let max = u.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = u.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if max == 0.0 || min <= SINGULAR_TOL * max {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(lu)
}

/// Solves `m x = rhs` after a singularity check.
pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    lu_checked(m, what)?
        .solve(rhs)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// ln|m| from a Cholesky factor.
pub fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}
