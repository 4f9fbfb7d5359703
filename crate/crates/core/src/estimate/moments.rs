use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Denominator used for the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Divisor {
    #[default]
    NMinusOne,
    N,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub names: Vec<String>,
    pub cov: DMatrix<f64>,
    pub n: usize,
    pub divisor: Divisor,
}

impl SampleMoments {
    pub fn new(names: Vec<String>, cov: DMatrix<f64>, n: usize, divisor: Divisor) -> Result<Self> {
        let p = names.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::Data(format!(
                "covariance matrix is {}x{} but {p} names were given",
                cov.nrows(),
                cov.ncols()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Data(format!("duplicate variable name `{a}`")));
            }
        }
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 observations, got {n}")));
        }
        for i in 0..p {
            if !cov[(i, i)].is_finite() || cov[(i, i)] <= 0.0 {
                return Err(Error::Data(format!(
                    "variance of `{}` is not positive",
                    names[i]
                )));
            }
            for j in 0..i {
                if cov[(i, j)] != cov[(j, i)] || !cov[(i, j)].is_finite() {
                    return Err(Error::Data("covariance matrix is not symmetric".into()));
                }
            }
        }
        Ok(SampleMoments {
            names,
            cov,
            n,
            divisor,
        })
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Moments restricted to and reordered as `names`.
    pub fn select(&self, names: &[String]) -> Result<SampleMoments> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.index_of(n).ok_or_else(|| Error::UnknownVariable(n.clone())))
            .collect::<Result<_>>()?;
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.cov[(idx[i], idx[j])]);
        Ok(SampleMoments {
            names: names.to_vec(),
            cov,
            n: self.n,
            divisor: self.divisor,
        })
    }
}
