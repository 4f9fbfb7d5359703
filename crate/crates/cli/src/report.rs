//! Text and JSON rendering of a fitted model.

use std::fmt::Write;

use serde_json::{json, Map, Value};

use compsem::assess::normal_two_sided;
use compsem::{FitResult, FitStatistics, IdentificationReport, ParamRow, ParameterTable};

pub struct Report<'a> {
    pub ident: &'a IdentificationReport,
    pub result: &'a FitResult,
    pub stats: &'a FitStatistics,
    pub standardized: Option<&'a ParameterTable>,
}

/// Rounds to 6 significant digits so output does not depend on the last bits
/// of the optimizer's end point. Non-finite values become `null`.
fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    // avoid "-0"
    json!(if rounded == 0.0 { 0.0 } else { rounded })
}

fn opt_num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// Estimate, SE, z and two-sided p of a row.
fn inference(row: &ParamRow) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let z = match (row.estimate, row.se) {
        (Some(est), Some(se)) if se > 0.0 => Some(est / se),
        _ => None,
    };
    (row.estimate, row.se, z, z.map(normal_two_sided))
}

fn text_num(v: Option<f64>, width: usize) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:>width$.4}"),
        _ => format!("{:>width$}", ""),
    }
}

impl Report<'_> {
    fn standardized_value(&self, i: usize) -> Option<f64> {
        self.standardized.and_then(|t| t.rows[i].estimate)
    }

    pub fn text(&self) -> String {
        let r = self.result;
        let st = self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "Estimator            {}", r.estimator.name());
        let _ = writeln!(out, "Observations (N)     {}", r.n);
        let _ = writeln!(out, "Observed variables   {}", self.ident.p);
        let _ = writeln!(out, "Free parameters      {}", self.ident.k_free);
        let _ = writeln!(out, "Degrees of freedom   {}", self.ident.df);
        let _ = writeln!(
            out,
            "Converged            {} ({} iterations, |gradient| = {:.2e})",
            if r.converged { "yes" } else { "no" },
            r.iterations,
            r.gradient_norm
        );

        let _ = writeln!(out, "\nIdentification");
        for c in &self.ident.checks {
            let _ = writeln!(out, "  [{:<7}] {}: {}", c.status.name(), c.name, c.message);
        }

        let _ = writeln!(out, "\nFit statistics");
        let _ = writeln!(out, "  F_min                {:.6}", r.f_min);
        let _ = writeln!(out, "  Chi-square           {:.4} (multiplier {})", st.chisq, st.multiplier);
        match st.pvalue {
            Some(p) => {
                let _ = writeln!(out, "  p-value              {p:.4}");
            }
            None => {
                let _ = writeln!(out, "  p-value              n/a (df = {})", st.df);
            }
        }
        let _ = writeln!(out, "  SRMR                 {:.4}", st.srmr);
        let _ = writeln!(out, "  RMSEA                {:.4}", st.rmsea);
        let _ = writeln!(out, "  Log-likelihood       {:.4}", st.loglik);
        let _ = writeln!(out, "  AIC                  {:.4}", st.aic);

        let width = r
            .table
            .rows
            .iter()
            .map(|row| row.name().chars().count())
            .max()
            .unwrap_or(0)
            .max(9);
        let _ = writeln!(out, "\nParameters");
        let mut header = format!(
            "  {:<width$}  {:<8} {:>10} {:>10} {:>10} {:>8}",
            "parameter", "status", "estimate", "se", "z", "p"
        );
        if self.standardized.is_some() {
            header.push_str(&format!(" {:>10}", "std"));
        }
        let _ = writeln!(out, "{header}");
        for (i, row) in r.table.rows.iter().enumerate() {
            let (est, se, z, p) = inference(row);
            let mut line = format!(
                "  {:<width$}  {:<8} {} {} {} {}",
                row.name(),
                row.status.name(),
                text_num(est, 10),
                text_num(se, 10),
                text_num(z, 10),
                text_num(p, 8)
            );
            if self.standardized.is_some() {
                line.push(' ');
                line.push_str(&text_num(self.standardized_value(i), 10));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }

        if !r.warnings.is_empty() {
            let _ = writeln!(out, "\nWarnings");
            for w in &r.warnings {
                let _ = writeln!(out, "  {w}");
            }
        }
        out
    }

    pub fn json(&self) -> String {
        let r = self.result;
        let st = self.stats;
        let c = &self.ident.counts;
        let checks: Vec<Value> = self
            .ident
            .checks
            .iter()
            .map(|c| json!({"name": c.name, "status": c.status.name(), "message": c.message}))
            .collect();
        let parameters: Vec<Value> = r
            .table
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let (est, se, z, p) = inference(row);
                let mut m = Map::new();
                m.insert("lhs".into(), json!(row.lhs));
                m.insert("op".into(), json!(row.op.symbol()));
                m.insert("rhs".into(), json!(row.rhs));
                m.insert("role".into(), json!(row.role.name()));
                m.insert("status".into(), json!(row.status.name()));
                m.insert("label".into(), json!(row.label));
                m.insert("estimate".into(), opt_num(est));
                m.insert("se".into(), opt_num(se));
                m.insert("z".into(), opt_num(z));
                m.insert("pvalue".into(), opt_num(p));
                if self.standardized.is_some() {
                    m.insert("std".into(), opt_num(self.standardized_value(i)));
                }
                Value::Object(m)
            })
            .collect();
        let warnings: Vec<String> = r.warnings.iter().map(ToString::to_string).collect();

        let doc = json!({
            "estimator": r.estimator.name(),
            "n": r.n,
            "p": self.ident.p,
            "df": self.ident.df,
            "k_free": self.ident.k_free,
            "converged": r.converged,
            "iterations": r.iterations,
            "gradient_norm": num(r.gradient_norm),
            "identification": {
                "passed": self.ident.passed(),
                "counts": {
                    "error_covariances": c.error_covariances,
                    "indicator_covariances": c.indicator_covariances,
                    "loadings": c.loadings,
                    "weights": c.weights,
                    "regressions": c.regressions,
                    "residual_variances": c.residual_variances,
                    "construct_covariances": c.construct_covariances,
                    "exogenous_variances": c.exogenous_variances,
                },
                "checks": checks,
            },
            "fit": {
                "f_min": num(r.f_min),
                "chisq": num(st.chisq),
                "df": st.df,
                "pvalue": opt_num(st.pvalue),
                "multiplier": num(st.multiplier),
                "srmr": num(st.srmr),
                "rmsea": num(st.rmsea),
                "loglik": num(st.loglik),
                "aic": num(st.aic),
            },
            "parameters": parameters,
            "warnings": warnings,
        });
        serde_json::to_string_pretty(&doc).expect("JSON values are always serializable")
    }
}
