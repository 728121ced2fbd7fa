//! Fit reports and their comparison against expected ranges.

use crate::config::Expectation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use zplsim::estimators::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: String,
    pub quantities: BTreeMap<String, Quantity>,
    pub fit: Option<FitResult>,
}

impl FitReport {
    pub fn new(kind: &str) -> Self {
        FitReport {
            kind: kind.into(),
            quantities: BTreeMap::new(),
            fit: None,
        }
    }

    /// Adds every fitted parameter plus the fit itself.
    pub fn with_fit(mut self, fit: FitResult) -> Self {
        for p in &fit.params {
            self.quantities.insert(
                p.name.clone(),
                Quantity {
                    value: p.value,
                    sigma: Some(p.std_error),
                },
            );
        }
        self.quantities.insert(
            "reduced_chi2".into(),
            Quantity {
                value: fit.reduced_chi2,
                sigma: None,
            },
        );
        self.fit = Some(fit);
        self
    }

    pub fn set(&mut self, name: &str, value: f64, sigma: Option<f64>) {
        self.quantities
            .insert(name.into(), Quantity { value, sigma });
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.kind);
        for (name, q) in &self.quantities {
            match q.sigma {
                Some(s) => writeln!(out, "  {name} = {} ± {}", q.value, s),
                None => writeln!(out, "  {name} = {}", q.value),
            }
            .unwrap();
        }
        if let Some(f) = &self.fit {
            writeln!(
                out,
                "  iterations = {}, converged = {}",
                f.n_iterations, f.converged
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub name: String,
    pub measured: Option<f64>,
    pub center: f64,
    pub tol: f64,
    /// `tol − |measured − center|`; negative when outside the range.
    pub margin: Option<f64>,
    pub pass: bool,
}

/// One row per expectation. A quantity missing from the report is a failed
/// row, not an error.
pub fn compare_report(report: &FitReport, expectations: &[Expectation]) -> Vec<Comparison> {
    expectations
        .iter()
        .map(|e| {
            let measured = report.quantities.get(&e.name).map(|q| q.value);
            let margin = measured.map(|v| e.tol - (v - e.center).abs());
            Comparison {
                name: e.name.clone(),
                measured,
                center: e.center,
                tol: e.tol,
                margin,
                pass: margin.is_some_and(|m| m >= 0.0),
            }
        })
        .collect()
}

pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut out = String::from("quantity,measured,expected,tolerance,margin,status\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map_or_else(|| "missing".to_string(), |v| v.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name,
            opt(r.measured),
            r.center,
            r.tol,
            opt(r.margin),
            if r.pass { "pass" } else { "fail" }
        )
        .unwrap();
    }
    out
}

pub fn comparison_table(rows: &[Comparison]) -> String {
    let mut out = format!(
        "{:<20} {:>14} {:>22} {:>12}  status\n",
        "quantity", "measured", "expected", "margin"
    );
    for r in rows {
        let measured = r.measured.map_or("missing".into(), |v| format!("{v:.5}"));
        let margin = r.margin.map_or("-".into(), |v| format!("{v:+.5}"));
        writeln!(
            out,
            "{:<20} {:>14} {:>22} {:>12}  {}",
            r.name,
            measured,
            format!("{} ± {}", r.center, r.tol),
            margin,
            if r.pass { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    out
}
