//! Degrees of freedom and necessary-condition identification checks.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::DMatrix;

use crate::matrices::ModelStructure;
use crate::ptable::{ConstructKind, ParameterTable, Role, Status};
use crate::syntax::{ModelSpec, Operator};

/// Degrees of freedom P(P+1)/2 − K.
pub fn count_df(table: &ParameterTable, p: usize) -> i64 {
    (p * (p + 1) / 2) as i64 - table.n_free() as i64
}

/// Free-parameter counts by kind. Shared labels are counted once, under the
/// first row that carries them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreeParameterCounts {
    pub error_covariances: usize,
    pub indicator_covariances: usize,
    pub loadings: usize,
    pub weights: usize,
    pub regressions: usize,
    /// Structural-error variances of endogenous constructs.
    pub residual_variances: usize,
    /// Covariances among constructs or structural errors.
    pub construct_covariances: usize,
    /// Variances of exogenous constructs.
    pub exogenous_variances: usize,
}

impl FreeParameterCounts {
    pub fn total(&self) -> usize {
        self.error_covariances
            + self.indicator_covariances
            + self.loadings
            + self.weights
            + self.regressions
            + self.residual_variances
            + self.construct_covariances
            + self.exogenous_variances
    }
}

pub fn free_parameter_counts(table: &ParameterTable) -> FreeParameterCounts {
    let mut c = FreeParameterCounts::default();
    let mut seen = HashSet::new();
    for r in &table.rows {
        let Some(k) = r.free_index else { continue };
        if !seen.insert(k) {
            continue;
        }
        match r.role {
            Role::ErrorCovariance => c.error_covariances += 1,
            Role::IndicatorCovariance => c.indicator_covariances += 1,
            Role::Loading => c.loadings += 1,
            Role::Weight => c.weights += 1,
            Role::Regression => c.regressions += 1,
            Role::ConstructCovariance if r.lhs != r.rhs => c.construct_covariances += 1,
            Role::ConstructCovariance => {
                if table.construct(&r.lhs).is_some_and(|c| c.endogenous) {
                    c.residual_variances += 1;
                } else {
                    c.exogenous_variances += 1;
                }
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// A sufficient rule is not met; the model may still be identified.
    Warning,
    NotApplicable,
}

impl CheckStatus {
    pub fn name(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Warning => "warning",
            CheckStatus::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub message: String,
}

impl Check {
    fn new(name: &'static str, findings: Vec<String>, failing: CheckStatus, ok: &str) -> Self {
        if findings.is_empty() {
            Check {
                name,
                status: CheckStatus::Pass,
                message: ok.to_string(),
            }
        } else {
            Check {
                name,
                status: failing,
                message: findings.join("; "),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    pub df: i64,
    pub k_free: usize,
    pub p: usize,
    pub counts: FreeParameterCounts,
    pub checks: Vec<Check>,
}

impl IdentificationReport {
    /// True when no applicable check fails.
    pub fn passed(&self) -> bool {
        self.df >= 0 && self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for IdentificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "df = {} (P = {}, K = {})", self.df, self.p, self.k_free)?;
        for c in &self.checks {
            writeln!(f, "  [{:<7}] {}: {}", c.status.name(), c.name, c.message)?;
        }
        Ok(())
    }
}

pub const T_RULE: &str = "t-rule";
pub const SCALING: &str = "scaling";
pub const TWO_INDICATOR: &str = "two-indicator";
pub const COMPOSITE_CONNECTIVITY: &str = "composite-connectivity";
pub const RECURSIVE: &str = "recursive-structure";
pub const NONSINGULAR_B: &str = "nonsingular-I-B";
pub const SINGLE_CONSTRUCT: &str = "single-construct-indicators";
pub const JACOBIAN_RANK: &str = "jacobian-rank";

fn nonzero(status: Status, fixed: Option<f64>) -> bool {
    match status {
        Status::Free | Status::Derived => true,
        Status::Fixed => fixed.is_some_and(|v| v != 0.0),
    }
}

/// Runs the necessary-condition checks. Never modifies its inputs.
pub fn check_identification(spec: &ModelSpec, table: &ParameterTable) -> IdentificationReport {
    let p = table.observed.len();
    let k_free = table.n_free();
    let df = count_df(table, p);
    let mut checks = Vec::new();

    checks.push(if df >= 0 {
        Check {
            name: T_RULE,
            status: CheckStatus::Pass,
            message: format!("df = {df} >= 0"),
        }
    } else {
        Check {
            name: T_RULE,
            status: CheckStatus::Fail,
            message: format!("df = {df} < 0: {k_free} parameters for {} moments", p * (p + 1) / 2),
        }
    });

    let variance_row = |name: &str| {
        table
            .rows
            .iter()
            .find(|r| r.role == Role::ConstructCovariance && r.lhs == name && r.rhs == name)
    };

    // scaling
    let mut unscaled = Vec::new();
    for c in &table.constructs {
        let scaled = match c.kind {
            ConstructKind::Latent | ConstructKind::Observed => {
                rows_for(table, &c.name, Role::Loading)
                    .any(|r| r.status == Status::Fixed && r.fixed_value != Some(0.0))
                    || variance_row(&c.name)
                        .is_some_and(|r| r.status == Status::Fixed && r.fixed_value != Some(0.0))
            }
            ConstructKind::Composite => rows_for(table, &c.name, Role::Weight)
                .any(|r| r.status == Status::Fixed && r.fixed_value != Some(0.0)),
        };
        if !scaled {
            unscaled.push(format!("`{}` has no fixed loading, weight or variance", c.name));
        }
    }
    checks.push(Check::new(
        SCALING,
        unscaled,
        CheckStatus::Fail,
        "every construct is scaled",
    ));

    // structural connections (B entries or construct covariances)
    let mut neighbours: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in &table.rows {
        let connects = match r.role {
            Role::Regression => true,
            Role::ConstructCovariance => r.lhs != r.rhs,
            _ => false,
        };
        if connects && nonzero(r.status, r.fixed_value) {
            neighbours.entry(&r.lhs).or_default().insert(&r.rhs);
            neighbours.entry(&r.rhs).or_default().insert(&r.lhs);
        }
    }
    let connected = |name: &str| neighbours.get(name).is_some_and(|s| !s.is_empty());

    // two-indicator rule
    let correlated_errors: HashSet<(&str, &str)> = table
        .rows
        .iter()
        .filter(|r| r.role == Role::ErrorCovariance && r.lhs != r.rhs && nonzero(r.status, r.fixed_value))
        .flat_map(|r| [(r.lhs.as_str(), r.rhs.as_str()), (r.rhs.as_str(), r.lhs.as_str())])
        .collect();
    let latents: Vec<_> = table
        .constructs
        .iter()
        .filter(|c| c.kind == ConstructKind::Latent)
        .collect();
    let mut weak = Vec::new();
    for c in &latents {
        let k = c.indicators.len();
        let uncorrelated = c.indicators.iter().enumerate().all(|(i, a)| {
            c.indicators[i + 1..]
                .iter()
                .all(|b| !correlated_errors.contains(&(a.as_str(), b.as_str())))
        });
        let ok = (k >= 3 && uncorrelated) || (k >= 2 && uncorrelated && connected(&c.name)) || (k >= 1 && connected(&c.name));
        if !ok {
            weak.push(format!(
                "`{}` has {k} indicator(s) and is not related to another construct",
                c.name
            ));
        }
    }
    checks.push(if latents.is_empty() {
        Check {
            name: TWO_INDICATOR,
            status: CheckStatus::NotApplicable,
            message: "no latent variables".into(),
        }
    } else {
        Check::new(
            TWO_INDICATOR,
            weak,
            CheckStatus::Warning,
            "every latent variable meets the two-indicator rule",
        )
    });

    // composite connectivity
    let composites: Vec<_> = table.constructs.iter().filter(|c| c.is_composite()).collect();
    let mut isolated = Vec::new();
    for c in &composites {
        let all_fixed = rows_for(table, &c.name, Role::Weight).all(|r| r.status == Status::Fixed);
        if !all_fixed && !connected(&c.name) {
            isolated.push(format!(
                "composite `{}` is not related to any variable outside its block and has free weights",
                c.name
            ));
        }
    }
    checks.push(if composites.is_empty() {
        Check {
            name: COMPOSITE_CONNECTIVITY,
            status: CheckStatus::NotApplicable,
            message: "no composites".into(),
        }
    } else {
        Check::new(
            COMPOSITE_CONNECTIVITY,
            isolated,
            CheckStatus::Fail,
            "every composite is related to another variable",
        )
    });

    // recursive rule
    let m = table.constructs.len();
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut any_b = false;
    for r in table.rows.iter().filter(|r| r.role == Role::Regression) {
        if nonzero(r.status, r.fixed_value) {
            if let (Some(dep), Some(pred)) = (table.construct_index(&r.lhs), table.construct_index(&r.rhs)) {
                edges[pred].push(dep);
                any_b = true;
            }
        }
    }
    let acyclic = is_acyclic(&edges);
    let correlated_disturbances: Vec<String> = table
        .rows
        .iter()
        .filter(|r| r.role == Role::ConstructCovariance && r.lhs != r.rhs && nonzero(r.status, r.fixed_value))
        .filter(|r| {
            [&r.lhs, &r.rhs]
                .iter()
                .any(|n| table.construct(n).is_some_and(|c| c.endogenous))
        })
        .map(|r| format!("`{}`", r.name()))
        .collect();
    checks.push(if !any_b {
        Check {
            name: RECURSIVE,
            status: CheckStatus::NotApplicable,
            message: "no structural paths".into(),
        }
    } else {
        let mut findings = Vec::new();
        if !acyclic {
            findings.push("the structural model contains feedback loops".to_string());
        }
        if !correlated_disturbances.is_empty() {
            findings.push(format!(
                "correlated structural errors: {}",
                correlated_disturbances.join(", ")
            ));
        }
        Check::new(
            RECURSIVE,
            findings,
            CheckStatus::Warning,
            "recursive structural model with uncorrelated errors",
        )
    });

    // I - B at start values
    let mut b = DMatrix::<f64>::zeros(m, m);
    for r in table.rows.iter().filter(|r| r.role == Role::Regression) {
        if let (Some(i), Some(j)) = (table.construct_index(&r.lhs), table.construct_index(&r.rhs)) {
            b[(i, j)] = r.fixed_value.unwrap_or(r.start_value);
        }
    }
    checks.push(
        match crate::linalg::lu_checked(&(DMatrix::identity(m, m) - b), "I - B") {
            Ok(_) => Check {
                name: NONSINGULAR_B,
                status: CheckStatus::Pass,
                message: "I - B is nonsingular at the start values".into(),
            },
            Err(_) => Check {
                name: NONSINGULAR_B,
                status: CheckStatus::Fail,
                message: "I - B is singular at the start values".into(),
            },
        },
    );

    // indicators attached to one construct
    let mut owners: HashMap<&str, Vec<&str>> = HashMap::new();
    for s in spec.statements.iter().filter(|s| s.op.is_measurement()) {
        for t in &s.rhs {
            owners.entry(&t.name).or_default().push(&s.lhs);
        }
    }
    let mut shared: Vec<String> = owners
        .iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(k, v)| format!("`{k}` is attached to {}", v.join(", ")))
        .collect();
    shared.sort();
    checks.push(Check::new(
        SINGLE_CONSTRUCT,
        shared,
        CheckStatus::Fail,
        "no indicator is attached to more than one construct",
    ));

    IdentificationReport {
        df,
        k_free,
        p,
        counts: free_parameter_counts(table),
        checks,
    }
}

fn rows_for<'a>(
    table: &'a ParameterTable,
    construct: &'a str,
    role: Role,
) -> impl Iterator<Item = &'a crate::ptable::ParamRow> + 'a {
    table
        .rows
        .iter()
        .filter(move |r| r.role == role && r.lhs == construct)
}

fn is_acyclic(edges: &[Vec<usize>]) -> bool {
    let n = edges.len();
    let mut indegree = vec![0usize; n];
    for e in edges {
        for &t in e {
            indegree[t] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop() {
        visited += 1;
        for &t in &edges[v] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                queue.push(t);
            }
        }
    }
    visited == n
}

/// Numerical rank check of ∂vech(Σ)/∂θ at `theta` (all K free parameters).
/// Singular values below 1e-8 × the largest produce a warning.
pub fn jacobian_rank_check(structure: &ModelStructure, theta: &[f64]) -> Check {
    let p = structure.n_observed();
    let vech = |th: &[f64]| -> Option<Vec<f64>> {
        let s = structure.implied(th).ok()?.sigma;
        Some((0..p).flat_map(|j| (j..p).map(move |i| (i, j))).map(|(i, j)| s[(i, j)]).collect())
    };
    let k = theta.len();
    let rows = p * (p + 1) / 2;
    let mut jac = DMatrix::zeros(rows, k);
    let mut th = theta.to_vec();
    for c in 0..k {
        let h = 1e-6 * theta[c].abs().max(1.0);
        th[c] = theta[c] + h;
        let up = vech(&th);
        th[c] = theta[c] - h;
        let down = vech(&th);
        th[c] = theta[c];
        let (Some(up), Some(down)) = (up, down) else {
            return Check {
                name: JACOBIAN_RANK,
                status: CheckStatus::NotApplicable,
                message: "model could not be evaluated around the start values".into(),
            };
        };
        for r in 0..rows {
            jac[(r, c)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    if k == 0 {
        return Check {
            name: JACOBIAN_RANK,
            status: CheckStatus::NotApplicable,
            message: "no free parameters".into(),
        };
    }
    let sv = jac.singular_values();
    let max = sv.iter().fold(0.0f64, |a, v| a.max(*v));
    let deficient = if k > rows {
        k - rows
    } else {
        sv.iter().filter(|&&v| v < 1e-8 * max).count()
    };
    if deficient == 0 {
        Check {
            name: JACOBIAN_RANK,
            status: CheckStatus::Pass,
            message: format!("Jacobian has full column rank {k}"),
        }
    } else {
        Check {
            name: JACOBIAN_RANK,
            status: CheckStatus::Warning,
            message: format!("Jacobian is rank deficient by {deficient} at the start values"),
        }
    }
}

/// Whether `op` on `lhs` counts as a measurement relation.
pub fn is_measurement(op: Operator) -> bool {
    op.is_measurement()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptable::{build_parameter_table, start_values, ScalingOptions};
    use crate::scenario;
    use crate::syntax::parse_model;

    fn build(model: &str, observed: &[&str]) -> (ModelSpec, ParameterTable) {
        let spec = parse_model(model).unwrap();
        let obs: Vec<String> = observed.iter().map(|s| s.to_string()).collect();
        let t = build_parameter_table(&spec, &obs, ScalingOptions::default()).unwrap();
        (spec, t)
    }

    #[test]
    fn scenario_df_and_checks() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let t = scenario::table();
        assert_eq!(count_df(&t, 13), 52);
        let report = check_identification(&spec, &t);
        assert!(report.passed(), "{report}");
        assert!(report
            .checks
            .iter()
            .all(|c| c.status == CheckStatus::Pass), "{report}");
        assert_eq!(
            report.counts,
            FreeParameterCounts {
                error_covariances: 6,
                indicator_covariances: 16,
                loadings: 4,
                weights: 5,
                regressions: 5,
                residual_variances: 1,
                construct_covariances: 1,
                exogenous_variances: 1,
            }
        );
    }

    #[test]
    fn one_factor_three_indicators_is_saturated() {
        let (_, t) = build("f =~ a + b + c", &["a", "b", "c"]);
        assert_eq!(t.n_free(), 6);
        assert_eq!(count_df(&t, 3), 0);
    }

    #[test]
    fn isolated_composite_fails_connectivity() {
        let (spec, t) = build("c <~ a + b + d", &["a", "b", "d"]);
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(COMPOSITE_CONNECTIVITY).unwrap().status, CheckStatus::Fail);
        assert!(report.df < 0);
        assert!(!report.passed());
    }

    #[test]
    fn isolated_composite_with_fixed_weights_passes_connectivity() {
        let (spec, t) = build("c <~ 1*a + 0.5*b + 2*d", &["a", "b", "d"]);
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(COMPOSITE_CONNECTIVITY).unwrap().status, CheckStatus::Pass);
    }

    #[test]
    fn two_correlated_factors() {
        let (spec, t) = build(
            "f =~ a + b + c\ng =~ d + e + h",
            &["a", "b", "c", "d", "e", "h"],
        );
        let report = check_identification(&spec, &t);
        assert!(report.passed(), "{report}");
        assert_eq!(report.check(TWO_INDICATOR).unwrap().status, CheckStatus::Pass);
        assert_eq!(report.df, 21 - 13);
    }

    #[test]
    fn unscaled_latent() {
        let (spec, t) = build("f =~ free*a + b + c", &["a", "b", "c"]);
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(SCALING).unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn feedback_loop_warns() {
        let (spec, t) = build(
            "f =~ a + b + c\ng =~ d + e + h\nf ~ g\ng ~ f",
            &["a", "b", "c", "d", "e", "h"],
        );
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(RECURSIVE).unwrap().status, CheckStatus::Warning);
    }

    #[test]
    fn singular_fixed_feedback() {
        let (spec, t) = build(
            "f =~ a + b + c\ng =~ d + e + h\nf ~ 1*g\ng ~ 1*f",
            &["a", "b", "c", "d", "e", "h"],
        );
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(NONSINGULAR_B).unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn cross_loading_fails() {
        let (spec, t) = build(
            "f =~ a + b + c\ng =~ c + d + e",
            &["a", "b", "c", "d", "e"],
        );
        let report = check_identification(&spec, &t);
        assert_eq!(report.check(SINGLE_CONSTRUCT).unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn df_invariant_to_row_order_and_drops_by_one_per_parameter() {
        let t = scenario::table();
        let mut shuffled = t.clone();
        shuffled.rows.reverse();
        assert_eq!(count_df(&shuffled, 13), count_df(&t, 13));

        let spec = parse_model(&format!("{}\ny1 ~~ y2", scenario::MODEL)).unwrap();
        let t2 = build_parameter_table(&spec, &scenario::observed_names(), ScalingOptions::default()).unwrap();
        assert_eq!(count_df(&t2, 13), count_df(&t, 13) - 1);
    }

    #[test]
    fn check_does_not_mutate() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let t = scenario::table();
        let before = (spec.clone(), t.clone());
        let _ = check_identification(&spec, &t);
        assert_eq!(before, (spec, t));
    }

    #[test]
    fn jacobian_rank_scenario_full() {
        let t = scenario::table();
        let t = start_values(&t, &scenario::population_moments(200)).unwrap();
        let s = ModelStructure::new(&t).unwrap();
        let check = jacobian_rank_check(&s, &scenario::population_theta(&t));
        assert_eq!(check.status, CheckStatus::Pass, "{}", check.message);
    }

    #[test]
    fn jacobian_rank_flags_unscaled_factor() {
        let (_, t) = build("f =~ free*a + b + c + d", &["a", "b", "c", "d"]);
        let s = ModelStructure::new(&t).unwrap();
        let theta = vec![0.8, 0.7, 0.6, 0.9, 0.5, 0.5, 0.5, 0.5, 1.0];
        assert_eq!(theta.len(), t.n_free());
        let check = jacobian_rank_check(&s, &theta);
        assert_eq!(check.status, CheckStatus::Warning);
    }
}
