//! Estimation: discrepancy minimization and Hessian-based standard errors.

mod discrepancy;
mod moments;
pub mod numdiff;
pub mod optimizer;
mod scoring;

use std::fmt;

use log::{debug, info};
use nalgebra::{DMatrix, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use discrepancy::{gls_discrepancy, ml_discrepancy, Discrepancy, Estimator};
pub use moments::{Divisor, SampleMoments};
pub use optimizer::{minimize, Minimum, OptimizerOptions};

use crate::error::{Error, Result};
use crate::matrices::{Implied, ModelStructure};
use crate::ptable::{ParameterTable, Role, Status};

/// Multiplier turning the minimized discrepancy into a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChisqMultiplier {
    #[default]
    NMinusOne,
    N,
}

impl ChisqMultiplier {
    pub fn value(self, n: usize) -> f64 {
        match self {
            ChisqMultiplier::NMinusOne => n as f64 - 1.0,
            ChisqMultiplier::N => n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiStart {
    /// Number of perturbed restarts in addition to the default start.
    pub starts: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub estimator: Estimator,
    pub optimizer: OptimizerOptions,
    pub multiplier: ChisqMultiplier,
    /// Threads for the numerical Hessian; 1 computes it sequentially.
    pub threads: usize,
    pub multi_start: Option<MultiStart>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            estimator: Estimator::Ml,
            optimizer: OptimizerOptions::default(),
            multiplier: ChisqMultiplier::NMinusOne,
            threads: 1,
            multi_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// The optimizer visited parameter values where Σ was not positive definite.
    InfeasibleEvaluations(usize),
    /// A derived composite (residual) variance is negative.
    NegativeDerivedVariance { construct: String, value: f64 },
    /// An estimated variance is negative (Heywood case).
    NegativeVariance { parameter: String, value: f64 },
    HessianNotPositiveDefinite,
    NotConverged,
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::InfeasibleEvaluations(n) => write!(
                f,
                "{n} evaluations hit a non-positive-definite implied covariance"
            ),
            FitWarning::NegativeDerivedVariance { construct, value } => write!(
                f,
                "derived variance of `{construct}` is negative ({value:.6}); improper solution"
            ),
            FitWarning::NegativeVariance { parameter, value } => {
                write!(f, "`{parameter}` is negative ({value:.6}); improper solution")
            }
            FitWarning::HessianNotPositiveDefinite => f.write_str(
                "Hessian is not positive definite; standard errors are not available",
            ),
            FitWarning::NotConverged => f.write_str("optimizer did not converge"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Table with `estimate` and `se` populated.
    pub table: ParameterTable,
    pub theta_hat: Vec<f64>,
    pub f_min: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub warnings: Vec<FitWarning>,
    pub estimator: Estimator,
    pub multiplier: f64,
    pub n: usize,
    /// Model evaluated at θ̂.
    pub implied: Implied,
    pub structure: ModelStructure,
    /// Hessian of F over the optimized parameters, in `active` order.
    pub hessian: Option<DMatrix<f64>>,
    /// Free-vector indices the optimizer moved (excludes sample-pinned T entries).
    pub active: Vec<usize>,
}

/// Objective over the optimized subset of θ.
pub struct Objective<'a> {
    structure: &'a ModelStructure,
    discrepancy: Discrepancy,
    base: Vec<f64>,
    active: Vec<usize>,
}

impl<'a> Objective<'a> {
    /// Sets sample-pinned entries of θ from `moments` and selects the rest.
    pub fn new(
        structure: &'a ModelStructure,
        table: &ParameterTable,
        moments: &SampleMoments,
        estimator: Estimator,
    ) -> Result<Self> {
        let mut base = table.start_theta();
        let mut pinned = vec![false; base.len()];
        let mut shared = vec![false; base.len()];
        for r in &table.rows {
            let Some(k) = r.free_index else { continue };
            if r.pinned_to_sample {
                let (i, j) = (
                    moments
                        .index_of(&r.lhs)
                        .ok_or_else(|| Error::UnknownVariable(r.lhs.clone()))?,
                    moments
                        .index_of(&r.rhs)
                        .ok_or_else(|| Error::UnknownVariable(r.rhs.clone()))?,
                );
                base[k] = moments.cov[(i, j)];
                pinned[k] = true;
            } else {
                shared[k] = true;
            }
        }
        let active = (0..base.len()).filter(|&k| !pinned[k] || shared[k]).collect();
        Ok(Objective {
            structure,
            discrepancy: Discrepancy::new(estimator, &moments.cov)?,
            base,
            active,
        })
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Full θ from the optimized subset.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for (&k, &v) in self.active.iter().zip(x) {
            theta[k] = v;
        }
        theta
    }

    pub fn start(&self) -> Vec<f64> {
        self.active.iter().map(|&k| self.base[k]).collect()
    }

    /// F at full θ; `Err` for infeasible points.
    pub fn eval_theta(&self, theta: &[f64]) -> Result<f64> {
        let imp = self.structure.implied(theta)?;
        self.discrepancy.eval(&imp.sigma)
    }

    /// F at the optimized subset; `+∞` for infeasible points.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval_theta(&self.expand(x)).unwrap_or(f64::INFINITY)
    }
}

/// Fits the model to the sample moments.
///
/// `table` must carry start values (see [`crate::ptable::start_values`]).
/// The quasi-Newton end point is refined by Fisher-scoring steps, which
/// resolve ill-conditioned directions the difference quotient of F cannot.
pub fn fit(moments: &SampleMoments, table: &ParameterTable, options: &FitOptions) -> Result<FitResult> {
    let moments = moments.select(&table.observed)?;
    let structure = ModelStructure::new(table)?;
    let objective = Objective::new(&structure, table, &moments, options.estimator)?;
    let f = |x: &[f64]| objective.value(x);

    let x0 = objective.start();
    if !f(&x0).is_finite() {
        return Err(match objective.eval_theta(&objective.expand(&x0)) {
            Err(e) => e,
            Ok(_) => Error::NotPositiveDefinite("model-implied covariance at start values".into()),
        });
    }
    let mut best = minimize(&f, &x0, &options.optimizer);
    info!(
        "start 0: F = {:.10e}, converged = {}, iterations = {}",
        best.f, best.converged, best.iterations
    );

    if let Some(ms) = options.multi_start {
        let mut rng = ChaCha8Rng::seed_from_u64(ms.seed);
        for s in 1..=ms.starts {
            let start: Vec<f64> = x0
                .iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v * (1.0 + 0.1 * z)
                })
                .collect();
            if !f(&start).is_finite() {
                debug!("start {s}: infeasible, skipped");
                continue;
            }
            let m = minimize(&f, &start, &options.optimizer);
            info!("start {s}: F = {:.10e}, converged = {}", m.f, m.converged);
            let better = (m.converged && !best.converged) || (m.converged == best.converged && m.f < best.f);
            if better {
                best = m;
            }
        }
    }

    if let Some(p) = scoring::polish(
        &objective,
        &moments.cov,
        options.estimator,
        &best.x,
        options.optimizer.gradient_tol,
        1e-16,
        options.optimizer.max_iter.min(100),
    ) {
        if p.f <= best.f {
            info!(
                "scoring polish: F = {:.10e}, |g| = {:.3e} after {} iterations",
                p.f, p.gradient_norm, p.iterations
            );
            best.x = p.x;
            best.f = p.f;
            best.gradient_norm = p.gradient_norm;
            best.iterations += p.iterations;
            best.converged = true;
        }
    }

    let theta_hat = objective.expand(&best.x);
    let implied = structure.implied(&theta_hat)?;
    let multiplier = options.multiplier.value(moments.n);

    let mut warnings = Vec::new();
    if !best.converged {
        warnings.push(FitWarning::NotConverged);
    }
    if best.infeasible > 0 {
        warnings.push(FitWarning::InfeasibleEvaluations(best.infeasible));
    }

    let hessian = numdiff::hessian(&f, &best.x, options.threads.max(1));
    let covariance = (&hessian + hessian.transpose()) * 0.5;
    let se_active: Option<Vec<f64>> = nalgebra::Cholesky::<f64, Dyn>::new(covariance)
        .map(|c| {
            let inv = c.inverse();
            (0..inv.nrows())
                .map(|i| (2.0 / multiplier * inv[(i, i)]).sqrt())
                .collect()
        })
        .filter(|v: &Vec<f64>| v.iter().all(|s| s.is_finite() && *s > 0.0));
    if se_active.is_none() {
        warnings.push(FitWarning::HessianNotPositiveDefinite);
    }

    let mut out = table.clone();
    let derived = implied.derived_variances(&structure);
    for row in &mut out.rows {
        row.se = None;
        row.estimate = Some(match row.status {
            Status::Free => theta_hat[row.free_index.unwrap()],
            Status::Fixed => row.fixed_value.unwrap_or(0.0),
            Status::Derived => {
                let c = table.construct_index(&row.lhs).unwrap();
                let pos = structure.composites.iter().position(|&m| m == c).unwrap();
                derived[pos]
            }
        });
        if let (Some(k), Some(se)) = (row.free_index, &se_active) {
            if let Some(a) = objective.active().iter().position(|&v| v == k) {
                row.se = Some(se[a]);
            }
        }
        let value = row.estimate.unwrap();
        let variance = row.is_variance()
            && matches!(row.role, Role::ConstructCovariance | Role::ErrorCovariance);
        if variance && value < 0.0 {
            warnings.push(match row.status {
                Status::Derived => FitWarning::NegativeDerivedVariance {
                    construct: row.lhs.clone(),
                    value,
                },
                _ => FitWarning::NegativeVariance {
                    parameter: row.name(),
                    value,
                },
            });
        }
    }

    let active = objective.active().to_vec();
    drop(objective);
    Ok(FitResult {
        table: out,
        theta_hat,
        f_min: best.f.max(0.0),
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
        warnings,
        estimator: options.estimator,
        multiplier,
        n: moments.n,
        implied,
        structure,
        hessian: Some(hessian),
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptable::{build_parameter_table, start_values, ScalingOptions};
    use crate::syntax::parse_model;

    fn moments(names: &[&str], cov: &[f64], n: usize) -> SampleMoments {
        let p = names.len();
        SampleMoments::new(
            names.iter().map(|s| s.to_string()).collect(),
            DMatrix::from_row_slice(p, p, cov),
            n,
            Divisor::NMinusOne,
        )
        .unwrap()
    }

    fn prepared(model: &str, m: &SampleMoments) -> ParameterTable {
        let spec = parse_model(model).unwrap();
        let t = build_parameter_table(&spec, &m.names, ScalingOptions::default()).unwrap();
        start_values(&t, m).unwrap()
    }

    #[test]
    fn one_factor_just_identified() {
        let m = moments(
            &["a", "b", "c"],
            &[2.0, 0.8, 0.6, 0.8, 1.5, 0.5, 0.6, 0.5, 1.2],
            100,
        );
        let t = prepared("f =~ a + b + c", &m);
        let r = fit(&m, &t, &FitOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.f_min < 1e-10);
        assert!(crate::linalg::max_abs(&(&r.implied.sigma - &m.cov)) < 1e-6);
        assert!(r.table.rows.iter().filter(|r| r.is_free()).all(|r| r.se.is_some()));
    }

    #[test]
    fn deterministic() {
        let m = moments(
            &["a", "b", "c", "d"],
            &[2.0, 0.8, 0.6, 0.7, 0.8, 1.5, 0.5, 0.4, 0.6, 0.5, 1.2, 0.45, 0.7, 0.4, 0.45, 1.3],
            150,
        );
        let t = prepared("f =~ a + b + c + d", &m);
        let a = fit(&m, &t, &FitOptions::default()).unwrap();
        let b = fit(&m, &t, &FitOptions::default()).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert!(a.f_min > 0.0);
    }

    #[test]
    fn threads_do_not_change_results() {
        let m = moments(
            &["a", "b", "c", "d"],
            &[2.0, 0.8, 0.6, 0.7, 0.8, 1.5, 0.5, 0.4, 0.6, 0.5, 1.2, 0.45, 0.7, 0.4, 0.45, 1.3],
            150,
        );
        let t = prepared("f =~ a + b + c + d", &m);
        let a = fit(&m, &t, &FitOptions::default()).unwrap();
        let opts = FitOptions {
            threads: 3,
            ..Default::default()
        };
        let b = fit(&m, &t, &opts).unwrap();
        assert_eq!(a.hessian, b.hessian);
        assert_eq!(
            a.table.rows.iter().map(|r| r.se).collect::<Vec<_>>(),
            b.table.rows.iter().map(|r| r.se).collect::<Vec<_>>()
        );
    }

    #[test]
    fn heywood_case_is_reported() {
        // one-factor exact fit with a negative error variance for `a`
        let m = moments(
            &["a", "b", "c"],
            &[1.0, 0.85, 0.85, 0.85, 1.0, 0.6, 0.85, 0.6, 1.0],
            100,
        );
        let t = prepared("f =~ a + b + c", &m);
        let r = fit(&m, &t, &FitOptions::default()).unwrap();
        assert!(r
            .warnings
            .iter()
            .any(|w| matches!(w, FitWarning::NegativeVariance { .. })));
    }

    #[test]
    fn multi_start_is_reproducible() {
        let m = moments(
            &["a", "b", "c", "d"],
            &[2.0, 0.8, 0.6, 0.7, 0.8, 1.5, 0.5, 0.4, 0.6, 0.5, 1.2, 0.45, 0.7, 0.4, 0.45, 1.3],
            150,
        );
        let t = prepared("f =~ a + b + c + d", &m);
        let opts = FitOptions {
            multi_start: Some(MultiStart { starts: 3, seed: 42 }),
            ..Default::default()
        };
        let a = fit(&m, &t, &opts).unwrap();
        let b = fit(&m, &t, &opts).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        let single = fit(&m, &t, &FitOptions::default()).unwrap();
        assert!((a.f_min - single.f_min).abs() < 1e-9);
    }
}
