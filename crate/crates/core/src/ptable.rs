//! Parameter table: the flat list of every model parameter.
//!
//! [`build_parameter_table`] expands a [`ModelSpec`] with the default scaling
//! rules and the automatically generated (co)variance parameters.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::estimate::SampleMoments;
use crate::syntax::{ModelSpec, Operator, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstructKind {
    Latent,
    Composite,
    /// An observed variable used directly in the structural model, wrapped
    /// as a single-indicator latent variable without measurement error.
    Observed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Construct {
    pub name: String,
    pub kind: ConstructKind,
    pub indicators: Vec<String>,
    pub endogenous: bool,
}

impl Construct {
    pub fn is_composite(&self) -> bool {
        self.kind == ConstructKind::Composite
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Factor loading (Λˡ).
    Loading,
    /// Composite weight (W).
    Weight,
    /// Structural coefficient (B).
    Regression,
    /// Construct variance/covariance or structural-error (co)variance (Ψ).
    ConstructCovariance,
    /// Measurement-error (co)variance of a latent-variable indicator (Θˡ).
    ErrorCovariance,
    /// Composite-indicator (co)variance (T).
    IndicatorCovariance,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Loading => "loading",
            Role::Weight => "weight",
            Role::Regression => "regression",
            Role::ConstructCovariance => "construct_cov",
            Role::ErrorCovariance => "error_cov",
            Role::IndicatorCovariance => "indicator_cov",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Free,
    Fixed,
    /// Determined by the other parameters (composite variance constraints).
    Derived,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Free => "free",
            Status::Fixed => "fixed",
            Status::Derived => "derived",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub id: usize,
    pub lhs: String,
    pub op: Operator,
    pub rhs: String,
    pub role: Role,
    pub status: Status,
    pub fixed_value: Option<f64>,
    pub start_value: f64,
    pub label: Option<String>,
    pub free_index: Option<usize>,
    /// Free composite-indicator (co)variance held at its sample value during
    /// optimization. Still counts as a model parameter.
    pub pinned_to_sample: bool,
    /// Written by the user rather than generated.
    pub user: bool,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
}

impl ParamRow {
    fn new(lhs: &str, op: Operator, rhs: &str, role: Role, user: bool) -> Self {
        ParamRow {
            id: 0,
            lhs: lhs.to_string(),
            op,
            rhs: rhs.to_string(),
            role,
            status: Status::Free,
            fixed_value: None,
            start_value: 0.0,
            label: None,
            free_index: None,
            pinned_to_sample: false,
            user,
            estimate: None,
            se: None,
        }
    }

    fn fix(&mut self, value: f64) {
        self.status = Status::Fixed;
        self.fixed_value = Some(value);
        self.start_value = value;
    }

    pub fn is_free(&self) -> bool {
        self.status == Status::Free
    }

    pub fn is_variance(&self) -> bool {
        self.op == Operator::CovariesWith && self.lhs == self.rhs
    }

    /// `lhs op rhs` as written in model syntax.
    pub fn name(&self) -> String {
        format!("{} {} {}", self.lhs, self.op, self.rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScalingOptions {
    /// Scale latent variables by fixing their (residual) variance to one
    /// instead of fixing the first loading.
    pub unit_variance: bool,
    /// Estimate composite-indicator (co)variances instead of holding them at
    /// their sample values.
    pub estimate_t: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTable {
    pub rows: Vec<ParamRow>,
    /// Model variables in model order.
    pub observed: Vec<String>,
    pub constructs: Vec<Construct>,
}

impl ParameterTable {
    /// Number of free parameters K (shared labels counted once).
    pub fn n_free(&self) -> usize {
        self.rows
            .iter()
            .filter_map(|r| r.free_index)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn construct(&self, name: &str) -> Option<&Construct> {
        self.constructs.iter().find(|c| c.name == name)
    }

    pub fn construct_index(&self, name: &str) -> Option<usize> {
        self.constructs.iter().position(|c| c.name == name)
    }

    pub fn observed_index(&self, name: &str) -> Option<usize> {
        self.observed.iter().position(|n| n == name)
    }

    /// First row matching `lhs op rhs`; covariances match in either order.
    pub fn find(&self, lhs: &str, op: Operator, rhs: &str) -> Option<&ParamRow> {
        self.rows.iter().find(|r| {
            r.op == op
                && ((r.lhs == lhs && r.rhs == rhs)
                    || (op == Operator::CovariesWith && r.lhs == rhs && r.rhs == lhs))
        })
    }

    /// Start vector θ₀ of length K.
    pub fn start_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_free()];
        let mut seen = vec![false; theta.len()];
        for r in &self.rows {
            if let Some(k) = r.free_index {
                if !seen[k] {
                    theta[k] = r.start_value;
                    seen[k] = true;
                }
            }
        }
        theta
    }

    /// Estimated vector θ̂ from the `estimate` column, if populated.
    pub fn estimate_theta(&self) -> Option<Vec<f64>> {
        let mut theta = vec![f64::NAN; self.n_free()];
        for r in &self.rows {
            if let Some(k) = r.free_index {
                theta[k] = r.estimate?;
            }
        }
        Some(theta)
    }

    /// Per-row parameter values for θ. Derived rows are `NaN`.
    pub fn row_values(&self, theta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match r.status {
                Status::Free => theta[r.free_index.expect("free row without index")],
                Status::Fixed => r.fixed_value.unwrap_or(0.0),
                Status::Derived => f64::NAN,
            })
            .collect()
    }

    /// Tab-separated rendering: lhs, op, rhs, status, value, se.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lhs\top\trhs\tstatus\tvalue\tse\n");
        for r in &self.rows {
            let value = r.estimate.or(r.fixed_value).unwrap_or(r.start_value);
            let se = r.se.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.lhs,
                r.op,
                r.rhs,
                r.status.name(),
                value,
                se
            );
        }
        out
    }
}

impl fmt::Display for ParameterTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

/// Where a name used in the model lives.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Ref {
    Construct(usize),
    /// Observed variable that is an indicator of the given construct.
    Indicator(usize),
}

struct Builder<'a> {
    observed_data: HashSet<&'a str>,
    constructs: Vec<Construct>,
    construct_idx: HashMap<String, usize>,
    /// indicator -> constructs it belongs to
    indicator_of: HashMap<String, Vec<usize>>,
    observed: Vec<String>,
    rows: Vec<ParamRow>,
    /// (role, ordered key) -> row
    cells: HashMap<(Role, String, String), usize>,
}

impl<'a> Builder<'a> {
    fn add_observed(&mut self, name: &str) {
        if !self.observed.iter().any(|o| o == name) {
            self.observed.push(name.to_string());
        }
    }

    fn resolve(&mut self, name: &str) -> Result<Ref> {
        if let Some(&c) = self.construct_idx.get(name) {
            return Ok(Ref::Construct(c));
        }
        if let Some(owners) = self.indicator_of.get(name) {
            return Ok(Ref::Indicator(owners[0]));
        }
        if self.observed_data.contains(name) {
            let idx = self.constructs.len();
            self.constructs.push(Construct {
                name: name.to_string(),
                kind: ConstructKind::Observed,
                indicators: vec![name.to_string()],
                endogenous: false,
            });
            self.construct_idx.insert(name.to_string(), idx);
            self.add_observed(name);
            return Ok(Ref::Construct(idx));
        }
        Err(Error::UnknownVariable(name.to_string()))
    }

    fn key(&self, role: Role, a: &str, b: &str) -> (Role, String, String) {
        let symmetric = matches!(
            role,
            Role::ConstructCovariance | Role::ErrorCovariance | Role::IndicatorCovariance
        );
        if symmetric && a > b {
            (role, b.to_string(), a.to_string())
        } else {
            (role, a.to_string(), b.to_string())
        }
    }

    fn push(&mut self, row: ParamRow) -> Result<usize> {
        let key = self.key(row.role, &row.lhs, &row.rhs);
        if self.cells.contains_key(&key) {
            return Err(Error::InvalidModel(format!(
                "parameter `{}` is specified more than once",
                row.name()
            )));
        }
        let idx = self.rows.len();
        self.cells.insert(key, idx);
        self.rows.push(row);
        Ok(idx)
    }

    fn lookup(&self, role: Role, a: &str, b: &str) -> Option<usize> {
        self.cells.get(&self.key(role, a, b)).copied()
    }

    fn push_user(&mut self, mut row: ParamRow, term: &Term) -> Result<usize> {
        if let Some(v) = term.fixed {
            row.fix(v);
        }
        row.label = term.label.clone();
        self.push(row)
    }
}

/// Expands `spec` into a complete parameter table.
///
/// `observed` lists the variables available in the data; every indicator and
/// covariate must be among them.
pub fn build_parameter_table(
    spec: &ModelSpec,
    observed: &[String],
    options: ScalingOptions,
) -> Result<ParameterTable> {
    let mut b = Builder {
        observed_data: observed.iter().map(String::as_str).collect(),
        constructs: Vec::new(),
        construct_idx: HashMap::new(),
        indicator_of: HashMap::new(),
        observed: Vec::new(),
        rows: Vec::new(),
        cells: HashMap::new(),
    };

    // constructs defined through indicators
    for s in spec.measurement() {
        if b.construct_idx.contains_key(&s.lhs) {
            return Err(Error::InvalidModel(format!(
                "construct `{}` has more than one measurement block",
                s.lhs
            )));
        }
        let kind = if s.op == Operator::MeasuredBy {
            ConstructKind::Latent
        } else {
            ConstructKind::Composite
        };
        if s.rhs.is_empty() {
            return Err(match kind {
                ConstructKind::Latent => Error::EmptyLatent(s.lhs.clone()),
                _ => Error::InvalidModel(format!("composite `{}` has no indicators", s.lhs)),
            });
        }
        if b.observed_data.contains(s.lhs.as_str()) {
            return Err(Error::InvalidModel(format!(
                "construct `{}` has the same name as an observed variable",
                s.lhs
            )));
        }
        let idx = b.constructs.len();
        b.construct_idx.insert(s.lhs.clone(), idx);
        b.constructs.push(Construct {
            name: s.lhs.clone(),
            kind,
            indicators: s.rhs.iter().map(|t| t.name.clone()).collect(),
            endogenous: false,
        });
    }
    let measured: Vec<usize> = (0..b.constructs.len()).collect();
    for &c in &measured {
        for ind in b.constructs[c].indicators.clone() {
            if b.construct_idx.contains_key(&ind) {
                return Err(Error::InvalidModel(format!(
                    "`{ind}` is a construct; constructs as indicators are not supported"
                )));
            }
            if !b.observed_data.contains(ind.as_str()) {
                return Err(Error::UnknownVariable(ind));
            }
            if b.constructs[c].kind == ConstructKind::Composite && b.indicator_of.contains_key(&ind) {
                return Err(Error::InvalidModel(format!(
                    "indicator `{ind}` of composite `{}` is attached to another construct",
                    b.constructs[c].name
                )));
            }
            b.indicator_of.entry(ind.clone()).or_default().push(c);
            b.add_observed(&ind);
        }
    }

    // user rows
    for s in &spec.statements {
        match s.op {
            Operator::MeasuredBy | Operator::ComposedOf => {
                let role = if s.op == Operator::MeasuredBy {
                    Role::Loading
                } else {
                    Role::Weight
                };
                for t in &s.rhs {
                    b.push_user(ParamRow::new(&s.lhs, s.op, &t.name, role, true), t)?;
                }
            }
            Operator::RegressedOn => {
                let dep = match b.resolve(&s.lhs)? {
                    Ref::Construct(c) => c,
                    Ref::Indicator(_) => {
                        return Err(Error::InvalidModel(format!(
                            "indicator `{}` cannot be regressed directly; regress its construct",
                            s.lhs
                        )))
                    }
                };
                b.constructs[dep].endogenous = true;
                for t in &s.rhs {
                    match b.resolve(&t.name)? {
                        Ref::Construct(p) if p == dep => {
                            return Err(Error::InvalidModel(format!(
                                "`{}` is regressed on itself",
                                s.lhs
                            )))
                        }
                        Ref::Construct(_) => {}
                        Ref::Indicator(_) => {
                            return Err(Error::InvalidModel(format!(
                                "indicator `{}` cannot be a predictor; use its construct",
                                t.name
                            )))
                        }
                    }
                    b.push_user(
                        ParamRow::new(&s.lhs, s.op, &t.name, Role::Regression, true),
                        t,
                    )?;
                }
            }
            Operator::CovariesWith => {
                let left = b.resolve(&s.lhs)?;
                for t in &s.rhs {
                    let right = b.resolve(&t.name)?;
                    let role = match (left, right) {
                        (Ref::Construct(_), Ref::Construct(_)) => Role::ConstructCovariance,
                        (Ref::Indicator(a), Ref::Indicator(c)) => {
                            let (ka, kc) = (b.constructs[a].kind, b.constructs[c].kind);
                            if ka == ConstructKind::Latent && kc == ConstructKind::Latent {
                                Role::ErrorCovariance
                            } else if ka == ConstructKind::Composite && a == c {
                                Role::IndicatorCovariance
                            } else {
                                return Err(Error::InvalidModel(format!(
                                    "covariance `{} ~~ {}` crosses a composite block",
                                    s.lhs, t.name
                                )));
                            }
                        }
                        _ => {
                            return Err(Error::InvalidModel(format!(
                                "covariance `{} ~~ {}` mixes a construct and an indicator",
                                s.lhs, t.name
                            )))
                        }
                    };
                    b.push_user(ParamRow::new(&s.lhs, s.op, &t.name, role, true), t)?;
                }
            }
        }
    }

    let constructs = b.constructs.clone();
    let user_term: HashMap<(String, String), &Term> = spec
        .statements
        .iter()
        .flat_map(|s| s.rhs.iter().map(move |t| ((s.lhs.clone(), t.name.clone()), t)))
        .collect();

    // scaling
    for c in &constructs {
        let variance_row = b.lookup(Role::ConstructCovariance, &c.name, &c.name);
        match c.kind {
            ConstructKind::Latent => {
                let loadings: Vec<usize> = c
                    .indicators
                    .iter()
                    .map(|i| b.lookup(Role::Loading, &c.name, i).expect("loading row"))
                    .collect();
                let fixed_loading = loadings.iter().any(|&r| b.rows[r].status == Status::Fixed);
                let fixed_variance = variance_row.is_some_and(|r| b.rows[r].status == Status::Fixed);
                if fixed_loading && fixed_variance {
                    return Err(Error::ScalingConflict(c.name.clone()));
                }
                if fixed_loading || fixed_variance {
                    continue;
                }
                if options.unit_variance {
                    match variance_row {
                        Some(r) => {
                            let explicitly_free = user_term
                                .get(&(c.name.clone(), c.name.clone()))
                                .is_some_and(|t| t.free);
                            if !explicitly_free {
                                b.rows[r].fix(1.0);
                            }
                        }
                        None => {
                            let mut row = ParamRow::new(
                                &c.name,
                                Operator::CovariesWith,
                                &c.name,
                                Role::ConstructCovariance,
                                false,
                            );
                            row.fix(1.0);
                            b.push(row)?;
                        }
                    }
                } else {
                    let first = loadings[0];
                    let released = user_term
                        .get(&(c.name.clone(), c.indicators[0].clone()))
                        .is_some_and(|t| t.free);
                    if !released {
                        b.rows[first].fix(1.0);
                    }
                }
            }
            ConstructKind::Composite => {
                if let Some(r) = variance_row {
                    if b.rows[r].status == Status::Fixed {
                        return Err(Error::InvalidModel(format!(
                            "the variance of composite `{}` is determined by its weights and cannot be fixed",
                            c.name
                        )));
                    }
                }
                let weights: Vec<usize> = c
                    .indicators
                    .iter()
                    .map(|i| b.lookup(Role::Weight, &c.name, i).expect("weight row"))
                    .collect();
                if !weights.iter().any(|&r| b.rows[r].status == Status::Fixed) {
                    let released = user_term
                        .get(&(c.name.clone(), c.indicators[0].clone()))
                        .is_some_and(|t| t.free);
                    if !released {
                        b.rows[weights[0]].fix(1.0);
                    }
                }
            }
            ConstructKind::Observed => {
                let mut loading =
                    ParamRow::new(&c.name, Operator::MeasuredBy, &c.name, Role::Loading, false);
                loading.fix(1.0);
                b.push(loading)?;
                let mut error =
                    ParamRow::new(&c.name, Operator::CovariesWith, &c.name, Role::ErrorCovariance, false);
                error.fix(0.0);
                b.push(error)?;
            }
        }
    }

    // measurement-error variances
    for c in constructs.iter().filter(|c| c.kind == ConstructKind::Latent) {
        for ind in &c.indicators {
            if b.lookup(Role::ErrorCovariance, ind, ind).is_none() {
                b.push(ParamRow::new(ind, Operator::CovariesWith, ind, Role::ErrorCovariance, false))?;
            }
        }
    }

    // composite-indicator (co)variances
    for c in constructs.iter().filter(|c| c.is_composite()) {
        for (i, a) in c.indicators.iter().enumerate() {
            for bb in &c.indicators[..=i] {
                let r = match b.lookup(Role::IndicatorCovariance, a, bb) {
                    Some(r) => r,
                    None => b.push(ParamRow::new(
                        bb,
                        Operator::CovariesWith,
                        a,
                        Role::IndicatorCovariance,
                        false,
                    ))?,
                };
                let row = &mut b.rows[r];
                let explicitly_free = user_term
                    .get(&(row.lhs.clone(), row.rhs.clone()))
                    .is_some_and(|t| t.free);
                if row.status == Status::Free
                    && row.label.is_none()
                    && !explicitly_free
                    && !options.estimate_t
                {
                    row.pinned_to_sample = true;
                }
            }
        }
    }

    // construct (residual) variances
    for c in &constructs {
        let r = match b.lookup(Role::ConstructCovariance, &c.name, &c.name) {
            Some(r) => r,
            None => b.push(ParamRow::new(
                &c.name,
                Operator::CovariesWith,
                &c.name,
                Role::ConstructCovariance,
                false,
            ))?,
        };
        if c.is_composite() {
            let row = &mut b.rows[r];
            row.status = Status::Derived;
            row.label = None;
        }
    }

    // covariances among exogenous constructs
    let exogenous: Vec<&Construct> = constructs.iter().filter(|c| !c.endogenous).collect();
    for (i, a) in exogenous.iter().enumerate() {
        for c in &exogenous[i + 1..] {
            if b.lookup(Role::ConstructCovariance, &a.name, &c.name).is_none() {
                b.push(ParamRow::new(
                    &a.name,
                    Operator::CovariesWith,
                    &c.name,
                    Role::ConstructCovariance,
                    false,
                ))?;
            }
        }
    }

    // free-vector indices; equal labels share one index
    let mut next = 0;
    let mut by_label: HashMap<String, usize> = HashMap::new();
    for (id, row) in b.rows.iter_mut().enumerate() {
        row.id = id;
        if row.status != Status::Free {
            continue;
        }
        let idx = match &row.label {
            Some(l) => *by_label.entry(l.clone()).or_insert_with(|| {
                next += 1;
                next - 1
            }),
            None => {
                next += 1;
                next - 1
            }
        };
        row.free_index = Some(idx);
    }

    Ok(ParameterTable {
        rows: b.rows,
        observed: b.observed,
        constructs: b.constructs,
    })
}

/// Populates `start_value` for every row from the sample moments.
pub fn start_values(table: &ParameterTable, moments: &SampleMoments) -> Result<ParameterTable> {
    let mut out = table.clone();
    let var_idx = |name: &str| {
        moments
            .index_of(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    };
    let s = &moments.cov;

    // reference (scaling) indicator per latent
    let mut reference: HashMap<&str, usize> = HashMap::new();
    for c in &table.constructs {
        let fixed = c.indicators.iter().find(|i| {
            table
                .find(&c.name, Operator::MeasuredBy, i)
                .is_some_and(|r| r.status == Status::Fixed && r.fixed_value != Some(0.0))
        });
        let ind = fixed.unwrap_or(&c.indicators[0]);
        reference.insert(c.name.as_str(), var_idx(ind)?);
    }
    let unit_scaled = |name: &str| {
        table
            .find(name, Operator::CovariesWith, name)
            .is_some_and(|r| r.role == Role::ConstructCovariance && r.status == Status::Fixed)
    };

    for row in &mut out.rows {
        let value = match row.status {
            Status::Fixed => row.fixed_value.unwrap_or(0.0),
            Status::Derived => 0.0,
            Status::Free => match row.role {
                Role::Loading => {
                    let i = var_idx(&row.rhs)?;
                    let r = reference[row.lhs.as_str()];
                    let sign = if s[(i, r)] < 0.0 { -1.0 } else { 1.0 };
                    if unit_scaled(&row.lhs) {
                        sign * (0.5 * s[(i, i)]).sqrt()
                    } else {
                        sign
                    }
                }
                Role::Weight => {
                    let c = table.construct(&row.lhs).expect("composite");
                    1.0 / c.indicators.len() as f64
                }
                Role::Regression => 0.0,
                Role::ErrorCovariance | Role::IndicatorCovariance => {
                    let (i, j) = (var_idx(&row.lhs)?, var_idx(&row.rhs)?);
                    match (row.role, i == j) {
                        (Role::IndicatorCovariance, _) => s[(i, j)],
                        (_, true) => 0.5 * s[(i, i)],
                        _ => 0.0,
                    }
                }
                Role::ConstructCovariance => {
                    if row.lhs != row.rhs {
                        0.0
                    } else {
                        let c = table.construct(&row.lhs).expect("construct");
                        let r = reference[row.lhs.as_str()];
                        match c.kind {
                            ConstructKind::Observed => s[(r, r)],
                            _ => 0.5 * s[(r, r)],
                        }
                    }
                }
            },
        };
        row.start_value = value;
    }

    // shared labels start from the first row carrying them
    let mut first: HashMap<usize, f64> = HashMap::new();
    for row in &mut out.rows {
        if let Some(k) = row.free_index {
            row.start_value = *first.entry(k).or_insert(row.start_value);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;
    use crate::syntax::parse_model;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("y{i}")).collect()
    }

    fn rows_of(t: &ParameterTable, role: Role) -> Vec<&ParamRow> {
        t.rows.iter().filter(|r| r.role == role).collect()
    }

    #[test]
    fn scenario_table_counts() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let t = build_parameter_table(&spec, &names(13), ScalingOptions::default()).unwrap();
        assert_eq!(t.n_free(), 39);
        let free = |role| rows_of(&t, role).iter().filter(|r| r.is_free()).count();
        assert_eq!(free(Role::Loading), 4);
        assert_eq!(free(Role::Weight), 5);
        assert_eq!(free(Role::Regression), 5);
        assert_eq!(free(Role::ErrorCovariance), 6);
        assert_eq!(free(Role::IndicatorCovariance), 16);
        assert_eq!(free(Role::ConstructCovariance), 3);
        for (a, b) in [("eta1", "eta1"), ("eta2", "eta2"), ("eta1", "eta3")] {
            assert!(t.find(a, Operator::CovariesWith, b).unwrap().is_free());
        }
        for c in ["eta3", "eta4"] {
            assert_eq!(t.find(c, Operator::CovariesWith, c).unwrap().status, Status::Derived);
        }
        assert!(rows_of(&t, Role::IndicatorCovariance).iter().all(|r| r.pinned_to_sample));
        for (c, i) in [("eta1", "y1"), ("eta2", "y4")] {
            assert_eq!(t.find(c, Operator::MeasuredBy, i).unwrap().fixed_value, Some(1.0));
        }
        for (c, i) in [("eta3", "y7"), ("eta4", "y10")] {
            assert_eq!(t.find(c, Operator::ComposedOf, i).unwrap().fixed_value, Some(1.0));
        }
        assert_eq!(t.observed, names(13));
    }

    #[test]
    fn free_indices_dense_and_deterministic() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let a = build_parameter_table(&spec, &names(13), ScalingOptions::default()).unwrap();
        let b = build_parameter_table(&spec, &names(13), ScalingOptions::default()).unwrap();
        assert_eq!(a, b);
        let mut idx: Vec<usize> = a.rows.iter().filter_map(|r| r.free_index).collect();
        idx.sort();
        assert_eq!(idx, (0..39).collect::<Vec<_>>());
        assert!(a
            .rows
            .iter()
            .all(|r| (r.status == Status::Free) == r.free_index.is_some()));
    }

    #[test]
    fn single_indicator_latent() {
        let spec = parse_model("f =~ x").unwrap();
        let t = build_parameter_table(&spec, &["x".into()], ScalingOptions::default()).unwrap();
        let loading_and_error: Vec<_> = t
            .rows
            .iter()
            .filter(|r| matches!(r.role, Role::Loading | Role::ErrorCovariance))
            .collect();
        assert_eq!(loading_and_error.len(), 2);
        assert_eq!(loading_and_error.iter().filter(|r| r.is_free()).count(), 1);
        assert_eq!(loading_and_error[0].fixed_value, Some(1.0));
    }

    #[test]
    fn two_indicator_composite_rows() {
        let spec = parse_model("eta3 <~ y7 + y8").unwrap();
        let obs = vec!["y7".to_string(), "y8".to_string()];
        let t = build_parameter_table(&spec, &obs, ScalingOptions::default()).unwrap();
        let w: Vec<_> = rows_of(&t, Role::Weight);
        assert_eq!(w[0].fixed_value, Some(1.0));
        assert!(w[1].is_free());
        let tr: Vec<_> = rows_of(&t, Role::IndicatorCovariance)
            .iter()
            .map(|r| (r.lhs.as_str(), r.rhs.as_str()))
            .collect();
        assert_eq!(tr, [("y7", "y7"), ("y7", "y8"), ("y8", "y8")]);
    }

    #[test]
    fn covariate_wrapped_as_single_indicator_latent() {
        let spec = parse_model("f =~ y1 + y2 + y3\nf ~ x").unwrap();
        let obs = vec!["y1".into(), "y2".into(), "y3".into(), "x".into()];
        let t = build_parameter_table(&spec, &obs, ScalingOptions::default()).unwrap();
        let x = t.construct("x").unwrap();
        assert_eq!(x.kind, ConstructKind::Observed);
        let l = t.find("x", Operator::MeasuredBy, "x").unwrap();
        assert_eq!(l.fixed_value, Some(1.0));
        let e = t
            .rows
            .iter()
            .find(|r| r.role == Role::ErrorCovariance && r.lhs == "x")
            .unwrap();
        assert_eq!(e.fixed_value, Some(0.0));
        let v = t
            .rows
            .iter()
            .find(|r| r.role == Role::ConstructCovariance && r.lhs == "x" && r.rhs == "x")
            .unwrap();
        assert!(v.is_free());
        assert!(t.construct("f").unwrap().endogenous);
    }

    #[test]
    fn user_fixed_loading_moves_scaling() {
        let spec = parse_model("f =~ y1 + 1*y2 + y3").unwrap();
        let t = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap();
        assert!(t.find("f", Operator::MeasuredBy, "y1").unwrap().is_free());
        assert_eq!(t.find("f", Operator::MeasuredBy, "y2").unwrap().fixed_value, Some(1.0));
    }

    #[test]
    fn unit_variance_scaling() {
        let spec = parse_model("f =~ y1 + y2 + y3").unwrap();
        let opts = ScalingOptions {
            unit_variance: true,
            ..Default::default()
        };
        let t = build_parameter_table(&spec, &names(3), opts).unwrap();
        assert_eq!(rows_of(&t, Role::Loading).iter().filter(|r| r.is_free()).count(), 3);
        assert_eq!(t.find("f", Operator::CovariesWith, "f").unwrap().fixed_value, Some(1.0));

        let spec = parse_model("f =~ y1 + y2 + y3\nf ~~ 1*f").unwrap();
        let t = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap();
        assert_eq!(rows_of(&t, Role::Loading).iter().filter(|r| r.is_free()).count(), 3);
    }

    #[test]
    fn scaling_conflict() {
        let spec = parse_model("f =~ 1*y1 + y2 + y3\nf ~~ 1*f").unwrap();
        let err = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap_err();
        assert_eq!(err, Error::ScalingConflict("f".into()));
    }

    #[test]
    fn unknown_variable() {
        let spec = parse_model("f =~ y1 + y2 + zz").unwrap();
        let err = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap_err();
        assert_eq!(err, Error::UnknownVariable("zz".into()));
        let spec = parse_model("f =~ y1 + y2\nf ~ ghost").unwrap();
        let err = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap_err();
        assert_eq!(err, Error::UnknownVariable("ghost".into()));
    }

    #[test]
    fn empty_latent() {
        let spec = ModelSpec {
            statements: vec![crate::syntax::Statement {
                lhs: "f".into(),
                op: Operator::MeasuredBy,
                rhs: vec![],
            }],
        };
        let err = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap_err();
        assert_eq!(err, Error::EmptyLatent("f".into()));
    }

    #[test]
    fn labels_share_free_index() {
        let spec = parse_model("f =~ y1 + a*y2 + a*y3").unwrap();
        let t = build_parameter_table(&spec, &names(3), ScalingOptions::default()).unwrap();
        let l2 = t.find("f", Operator::MeasuredBy, "y2").unwrap().free_index;
        let l3 = t.find("f", Operator::MeasuredBy, "y3").unwrap().free_index;
        assert_eq!(l2, l3);
        // 1 shared loading + 3 error variances + 1 factor variance
        assert_eq!(t.n_free(), 5);
    }

    #[test]
    fn estimate_t_releases_indicator_covariances() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let opts = ScalingOptions {
            estimate_t: true,
            ..Default::default()
        };
        let t = build_parameter_table(&spec, &names(13), opts).unwrap();
        assert!(rows_of(&t, Role::IndicatorCovariance).iter().all(|r| !r.pinned_to_sample && r.is_free()));
        assert_eq!(t.n_free(), 39);
    }

    #[test]
    fn fixed_composite_variance_rejected() {
        let spec = parse_model("c <~ y1 + y2\nc ~~ 1*c").unwrap();
        assert!(matches!(
            build_parameter_table(&spec, &names(2), ScalingOptions::default()),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn scenario_start_values() {
        let spec = parse_model(scenario::MODEL).unwrap();
        let t = build_parameter_table(&spec, &names(13), ScalingOptions::default()).unwrap();
        let moments = scenario::population_moments(200);
        let t = start_values(&t, &moments).unwrap();
        let w8 = t.find("eta3", Operator::ComposedOf, "y8").unwrap().start_value;
        assert!((w8 - 1.0 / 3.0).abs() < 1e-15);
        let theta1 = t
            .rows
            .iter()
            .find(|r| r.role == Role::ErrorCovariance && r.lhs == "y1")
            .unwrap()
            .start_value;
        // 0.5 * var(y1) with var(y1) = 2.5
        assert!((theta1 - 1.25).abs() < 1e-12);
        assert!(rows_of(&t, Role::Regression).iter().all(|r| r.start_value == 0.0));
        let t78 = t.find("y7", Operator::CovariesWith, "y8").unwrap().start_value;
        assert!((t78 - 2.0).abs() < 1e-12);
    }
}
