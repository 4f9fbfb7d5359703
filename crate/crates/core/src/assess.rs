//! Overall fit statistics and the standardized solution.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::Result;
use crate::estimate::{FitResult, SampleMoments};
use crate::linalg;
use crate::matrices::{Cell, Implied, ModelStructure};
use crate::ptable::ParameterTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SrmrVariant {
    /// Mean over all P(P+1)/2 non-redundant cells.
    #[default]
    IncludeDiagonal,
    /// Mean over the P(P−1)/2 off-diagonal cells only.
    OffDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitStatistics {
    pub chisq: f64,
    pub df: i64,
    /// Upper-tail χ² probability; `None` when df ≤ 0.
    pub pvalue: Option<f64>,
    pub srmr: f64,
    pub rmsea: f64,
    pub aic: f64,
    pub loglik: f64,
    pub n: usize,
    pub multiplier: f64,
    pub k_free: usize,
}

/// Upper-tail probability of a χ² variate with `df` degrees of freedom.
pub fn chisq_upper_tail(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0).clamp(0.0, 1.0)
    }
}

/// Two-sided standard-normal p-value of `z`.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// SRMR between `s` and `sigma` in the correlation metric.
pub fn srmr(s: &DMatrix<f64>, sigma: &DMatrix<f64>, variant: SrmrVariant) -> f64 {
    let p = s.nrows();
    let mut sum = 0.0;
    let mut cells = 0usize;
    for j in 0..p {
        for i in j..p {
            if i == j && variant == SrmrVariant::OffDiagonal {
                continue;
            }
            let rs = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
            let rm = sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            sum += (rs - rm).powi(2);
            cells += 1;
        }
    }
    if cells == 0 {
        0.0
    } else {
        (sum / cells as f64).sqrt()
    }
}

pub fn fit_statistics(fit: &FitResult, moments: &SampleMoments, df: i64) -> Result<FitStatistics> {
    fit_statistics_with(fit, moments, df, SrmrVariant::default())
}

pub fn fit_statistics_with(
    fit: &FitResult,
    moments: &SampleMoments,
    df: i64,
    variant: SrmrVariant,
) -> Result<FitStatistics> {
    let moments = moments.select(&fit.structure.observed)?;
    let s = &moments.cov;
    let sigma = &fit.implied.sigma;
    let p = s.nrows() as f64;
    let mult = fit.multiplier;

    let chisq = mult * fit.f_min;
    let pvalue = (df > 0).then(|| chisq_upper_tail(chisq, df as f64));
    let rmsea = if df > 0 {
        ((chisq - df as f64).max(0.0) / (df as f64 * mult)).sqrt()
    } else {
        0.0
    };

    let chol = linalg::cholesky(sigma, "model-implied covariance")?;
    let trace = (chol.solve(s)).trace();
    let loglik = -(mult / 2.0) * (linalg::ln_det(&chol) + trace) - (mult * p / 2.0) * (2.0 * PI).ln();
    let k_free = fit.structure.n_free();

    Ok(FitStatistics {
        chisq,
        df,
        pvalue,
        srmr: srmr(s, sigma, variant),
        rmsea,
        aic: -2.0 * loglik + 2.0 * k_free as f64,
        loglik,
        n: fit.n,
        multiplier: mult,
        k_free,
    })
}

/// Standardized per-row values. Rows whose scale is zero or undefined are `NaN`.
///
/// `values` are per-row parameter values; derived rows are recomputed.
pub fn standardize_values(structure: &ModelStructure, values: &[f64]) -> Result<Vec<f64>> {
    let imp = structure.implied_from_values(values)?;
    Ok(standardize_implied(structure, &imp))
}

fn standardize_implied(structure: &ModelStructure, imp: &Implied) -> Vec<f64> {
    let sd_obs = |i: usize| imp.sigma[(i, i)].sqrt();
    let sd_con = |m: usize| imp.v_eta[(m, m)].sqrt();
    let ratio = |num: f64, den: f64| {
        let v = num / den;
        if den > 0.0 && v.is_finite() {
            v
        } else {
            f64::NAN
        }
    };
    let m = &imp.matrices;
    structure
        .cells
        .iter()
        .map(|&cell| match cell {
            Cell::LambdaL(i, j) => {
                let (oi, cj) = (structure.latent_indicators[i], structure.latents[j]);
                ratio(m.lambda_l[(i, j)] * sd_con(cj), sd_obs(oi))
            }
            Cell::W(i, j) => {
                let oi = structure.composite_indicators[i];
                ratio(m.w[(i, j)] * sd_obs(oi), imp.composite_cov[(j, j)].sqrt())
            }
            Cell::B(i, j) => ratio(m.b[(i, j)] * sd_con(j), sd_con(i)),
            Cell::Psi(i, j) => ratio(m.psi[(i, j)], sd_con(i) * sd_con(j)),
            Cell::ThetaL(i, j) => {
                let (oi, oj) = (structure.latent_indicators[i], structure.latent_indicators[j]);
                ratio(m.theta_l[(i, j)], sd_obs(oi) * sd_obs(oj))
            }
            Cell::T(i, j) => {
                let (oi, oj) = (
                    structure.composite_indicators[i],
                    structure.composite_indicators[j],
                );
                ratio(m.t[(i, j)], sd_obs(oi) * sd_obs(oj))
            }
        })
        .collect()
}

/// Copy of the fitted table whose `estimate` column holds standardized values.
/// Standard errors are cleared.
pub fn standardize(fit: &FitResult) -> ParameterTable {
    let values = standardize_implied(&fit.structure, &fit.implied);
    let mut out = fit.table.clone();
    for (row, v) in out.rows.iter_mut().zip(values) {
        row.estimate = v.is_finite().then_some(v);
        row.se = None;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{fit, Divisor, FitOptions};
    use crate::ptable::{build_parameter_table, start_values, ScalingOptions};
    use crate::syntax::parse_model;

    #[test]
    fn srmr_two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let sigma = DMatrix::identity(2, 2);
        let v = srmr(&s, &sigma, SrmrVariant::IncludeDiagonal);
        assert!((v - (0.25f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((srmr(&s, &sigma, SrmrVariant::OffDiagonal) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn upper_tail_reference_values() {
        // df = 2: exp(-x/2)
        assert!((chisq_upper_tail(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-12);
        assert!((chisq_upper_tail(3.841458820694124, 1.0) - 0.05).abs() < 1e-10);
        assert_eq!(chisq_upper_tail(0.0, 5.0), 1.0);
        // erfc is accurate to about 1e-11 here
        assert!((normal_two_sided(1.959963984540054) - 0.05).abs() < 1e-10);
        assert_eq!(normal_two_sided(0.0), 1.0);
    }

    fn one_factor(cov: &[f64], n: usize) -> (FitResult, SampleMoments) {
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let m = SampleMoments::new(names.clone(), DMatrix::from_row_slice(4, 4, cov), n, Divisor::NMinusOne).unwrap();
        let spec = parse_model("f =~ a + b + c + d").unwrap();
        let t = build_parameter_table(&spec, &names, ScalingOptions::default()).unwrap();
        let t = start_values(&t, &m).unwrap();
        (fit(&m, &t, &FitOptions::default()).unwrap(), m)
    }

    const COV: [f64; 16] = [
        2.0, 0.8, 0.6, 0.7, 0.8, 1.5, 0.5, 0.4, 0.6, 0.5, 1.2, 0.45, 0.7, 0.4, 0.45, 1.3,
    ];

    #[test]
    fn statistics_relations() {
        let (r, m) = one_factor(&COV, 150);
        let st = fit_statistics(&r, &m, 2).unwrap();
        assert_eq!(st.chisq / st.multiplier, r.f_min);
        assert!(st.pvalue.unwrap() > 0.0 && st.pvalue.unwrap() <= 1.0);
        assert!(st.rmsea >= 0.0);
        assert!((st.aic - (-2.0 * st.loglik + 16.0)).abs() < 1e-9);
        let saturated = fit_statistics(&r, &m, 0).unwrap();
        assert!(saturated.pvalue.is_none());
        assert_eq!(saturated.rmsea, 0.0);
    }

    #[test]
    fn standardized_one_factor() {
        let (r, _) = one_factor(&COV, 150);
        let std = standardize(&r);
        let l = std.rows.iter().find(|r| r.rhs == "a" && r.role == crate::ptable::Role::Loading).unwrap();
        let e = std.rows.iter().find(|r| r.lhs == "a" && r.rhs == "a").unwrap();
        let (l, e) = (l.estimate.unwrap(), e.estimate.unwrap());
        assert!((l * l + e - 1.0).abs() < 1e-10);
        let fv = std.rows.iter().find(|r| r.lhs == "f" && r.rhs == "f").unwrap();
        assert!((fv.estimate.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardization_is_idempotent() {
        let (r, _) = one_factor(&COV, 150);
        let once = standardize_values(&r.structure, &r.structure.row_values(&r.theta_hat)).unwrap();
        let twice = standardize_values(&r.structure, &once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn unit_scaled_model_is_a_fixed_point() {
        let spec = parse_model("f =~ 0.6*a + 0.8*b\na ~~ 0.64*a\nb ~~ 0.36*b").unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let t = build_parameter_table(&spec, &names, ScalingOptions::default()).unwrap();
        let s = ModelStructure::new(&t).unwrap();
        assert_eq!(s.n_free(), 1);
        let values = s.row_values(&[1.0]);
        let std = standardize_values(&s, &values).unwrap();
        for (a, b) in values.iter().zip(&std) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
