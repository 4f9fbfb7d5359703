//! Discrepancy functions between a sample covariance S and a model-implied Σ.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    #[default]
    Ml,
    Gls,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ml => "ML",
            Estimator::Gls => "GLS",
        }
    }
}

/// Normal-theory ML discrepancy F = ln|Σ| + tr(SΣ⁻¹) − ln|S| − P.
pub fn ml_discrepancy(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let ln_det_s = linalg::ln_det(&linalg::cholesky(s, "sample covariance")?);
    ml_with(s, ln_det_s, sigma)
}

fn ml_with(s: &DMatrix<f64>, ln_det_s: f64, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = linalg::cholesky(sigma, "model-implied covariance")?;
    let p = s.nrows();
    let trace = chol.solve(s).trace();
    Ok(linalg::ln_det(&chol) + trace - ln_det_s - p as f64)
}

/// GLS discrepancy F = ½ tr[(I − ΣS⁻¹)²].
pub fn gls_discrepancy(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let s_inv = linalg::cholesky(s, "sample covariance")
        .map_err(|_| Error::Singular("sample covariance".into()))?
        .inverse();
    Ok(gls_with(&s_inv, sigma))
}

fn gls_with(s_inv: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows();
    let r = DMatrix::identity(p, p) - sigma * s_inv;
    0.5 * (&r * &r).trace()
}

/// Discrepancy with the sample-side quantities precomputed.
#[derive(Debug, Clone)]
pub struct Discrepancy {
    estimator: Estimator,
    s: DMatrix<f64>,
    ln_det_s: f64,
    s_inv: DMatrix<f64>,
}

impl Discrepancy {
    pub fn new(estimator: Estimator, s: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(s, "sample covariance")?;
        Ok(Discrepancy {
            estimator,
            s: s.clone(),
            ln_det_s: linalg::ln_det(&chol),
            s_inv: chol.inverse(),
        })
    }

    pub fn estimator(&self) -> Estimator {
        self.estimator
    }

    /// Errors when Σ is not positive definite (ML) or not finite.
    pub fn eval(&self, sigma: &DMatrix<f64>) -> Result<f64> {
        let f = match self.estimator {
            Estimator::Ml => ml_with(&self.s, self.ln_det_s, sigma)?,
            Estimator::Gls => {
                if sigma.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NotPositiveDefinite("model-implied covariance".into()));
                }
                gls_with(&self.s_inv, sigma)
            }
        };
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NotPositiveDefinite("model-implied covariance".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f64], n: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn scalar_values() {
        let s = m(&[2.0], 1);
        let sigma = m(&[1.0], 1);
        assert!((ml_discrepancy(&s, &sigma).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((gls_discrepancy(&s, &sigma).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_at_equality() {
        let s = m(&[2.0, 0.5, 0.5, 1.0], 2);
        assert!(ml_discrepancy(&s, &s).unwrap().abs() < 1e-14);
        assert!(gls_discrepancy(&s, &s).unwrap().abs() < 1e-14);
    }

    #[test]
    fn infeasible_sigma() {
        let s = m(&[1.0, 0.0, 0.0, 1.0], 2);
        let bad = m(&[1.0, 2.0, 2.0, 1.0], 2);
        assert!(matches!(ml_discrepancy(&s, &bad), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn singular_sample_for_gls() {
        let s = m(&[1.0, 1.0, 1.0, 1.0], 2);
        assert!(matches!(gls_discrepancy(&s, &s), Err(Error::Singular(_))));
    }
}
