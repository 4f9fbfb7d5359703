//! Reference population: two latent variables and two composites.
//!
//! η1 and η2 are latent variables with three indicators each (error
//! variances 0.5); η3 and η4 are composites of y7–y9 and y10–y13. The
//! structural model is η4 = 0.6η1 + 0.5η3 + ζ4 and
//! η2 = 0.2η1 + 0.1η3 + 0.3η4 + ζ2, with var(η1) = 2, var(ζ2) = 1.5 and
//! cov(η1, η3) = 0.1.

use nalgebra::DMatrix;

use crate::estimate::{Divisor, SampleMoments};
use crate::matrices::ModelStructure;
use crate::ptable::{build_parameter_table, ParameterTable, ScalingOptions};
use crate::syntax::{parse_model, Operator};

pub const MODEL: &str = "\
eta1 =~ y1 + y2 + y3
eta2 =~ y4 + y5 + y6
eta3 <~ y7 + y8 + y9
eta4 <~ y10 + y11 + y12 + y13
eta4 ~ eta1 + eta3
eta2 ~ eta1 + eta3 + eta4
";

/// Same model scaled on the second indicator of every construct.
pub const MODEL_SECOND_INDICATOR: &str = "\
eta1 =~ y1 + 1*y2 + y3
eta2 =~ y4 + 1*y5 + y6
eta3 <~ y7 + 1*y8 + y9
eta4 <~ y10 + 1*y11 + y12 + y13
eta4 ~ eta1 + eta3
eta2 ~ eta1 + eta3 + eta4
";

pub const T_ETA3: [[f64; 3]; 3] = [[6.0, 2.0, 1.2], [2.0, 5.0, 1.5], [1.2, 1.5, 2.0]];

pub const T_ETA4: [[f64; 4]; 4] = [
    [7.0, 0.9, 0.5, 1.2],
    [0.9, 3.0, 0.7, 1.8],
    [0.5, 0.7, 2.0, 0.5],
    [1.2, 1.8, 0.5, 5.0],
];

/// Population values of the loadings, weights, structural coefficients,
/// construct (co)variances, and error variances, as `(lhs, op, rhs, value)`.
pub const POPULATION: &[(&str, Operator, &str, f64)] = &[
    ("eta1", Operator::MeasuredBy, "y1", 1.0),
    ("eta1", Operator::MeasuredBy, "y2", 0.8),
    ("eta1", Operator::MeasuredBy, "y3", 0.9),
    ("eta2", Operator::MeasuredBy, "y4", 1.0),
    ("eta2", Operator::MeasuredBy, "y5", 0.7),
    ("eta2", Operator::MeasuredBy, "y6", 0.8),
    ("eta3", Operator::ComposedOf, "y7", 1.0),
    ("eta3", Operator::ComposedOf, "y8", 0.4),
    ("eta3", Operator::ComposedOf, "y9", 0.6),
    ("eta4", Operator::ComposedOf, "y10", 1.0),
    ("eta4", Operator::ComposedOf, "y11", 0.2),
    ("eta4", Operator::ComposedOf, "y12", 0.5),
    ("eta4", Operator::ComposedOf, "y13", 0.3),
    ("eta4", Operator::RegressedOn, "eta1", 0.6),
    ("eta4", Operator::RegressedOn, "eta3", 0.5),
    ("eta2", Operator::RegressedOn, "eta1", 0.2),
    ("eta2", Operator::RegressedOn, "eta3", 0.1),
    ("eta2", Operator::RegressedOn, "eta4", 0.3),
    ("eta1", Operator::CovariesWith, "eta1", 2.0),
    ("eta2", Operator::CovariesWith, "eta2", 1.5),
    ("eta1", Operator::CovariesWith, "eta3", 0.1),
    ("y1", Operator::CovariesWith, "y1", 0.5),
    ("y2", Operator::CovariesWith, "y2", 0.5),
    ("y3", Operator::CovariesWith, "y3", 0.5),
    ("y4", Operator::CovariesWith, "y4", 0.5),
    ("y5", Operator::CovariesWith, "y5", 0.5),
    ("y6", Operator::CovariesWith, "y6", 0.5),
];

pub fn observed_names() -> Vec<String> {
    (1..=13).map(|i| format!("y{i}")).collect()
}

/// Population value of a composite-indicator (co)variance.
pub fn indicator_covariance(a: &str, b: &str) -> Option<f64> {
    let idx = |s: &str| s.trim_start_matches('y').parse::<usize>().ok();
    let (i, j) = (idx(a)?, idx(b)?);
    match (i, j) {
        (7..=9, 7..=9) => Some(T_ETA3[i - 7][j - 7]),
        (10..=13, 10..=13) => Some(T_ETA4[i - 10][j - 10]),
        _ => None,
    }
}

pub fn table() -> ParameterTable {
    let spec = parse_model(MODEL).expect("reference model parses");
    build_parameter_table(&spec, &observed_names(), ScalingOptions::default())
        .expect("reference model expands")
}

/// θ₀ for a table of the reference model (any scaling whose fixed values
/// agree with the population).
pub fn population_theta(table: &ParameterTable) -> Vec<f64> {
    let mut theta = vec![f64::NAN; table.n_free()];
    for r in &table.rows {
        let Some(k) = r.free_index else { continue };
        let value = POPULATION
            .iter()
            .find(|(l, op, rr, _)| *op == r.op && *l == r.lhs && *rr == r.rhs && !matches!(r.role, crate::ptable::Role::IndicatorCovariance))
            .map(|p| p.3)
            .or_else(|| indicator_covariance(&r.lhs, &r.rhs))
            .unwrap_or(0.0);
        theta[k] = value;
    }
    theta
}

/// Population covariance matrix of y1..y13.
pub fn population_sigma() -> DMatrix<f64> {
    let t = table();
    let s = ModelStructure::new(&t).expect("structure");
    s.implied(&population_theta(&t)).expect("population model evaluates").sigma
}

/// Moments equal to the population covariance, as an exact sample would give.
pub fn population_moments(n: usize) -> SampleMoments {
    SampleMoments::new(observed_names(), population_sigma(), n, Divisor::NMinusOne)
        .expect("population covariance is valid")
}
