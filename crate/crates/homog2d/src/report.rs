//! Deterministic CSV assembly and the PASS/FLAG run report.
//!
//! The report is a view over the CSV artifacts: every number quoted in a
//! report line uses the same formatter as the CSV cell it came from, so
//! the two can be cross-checked mechanically. FLAG lines mark ratio
//! drifts worth a look; they never fail a run (hard invariant violations
//! surface as errors instead).

use crate::effective::EffectiveTensors;
use crate::green::BoundReport;
use crate::rates::{FitOutcome, RateReport};

/// Shortest deterministic numeric format: plain decimal in a readable
/// range, scientific elsewhere.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() && (1e-4..1e6).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Quote a CSV field if it contains a separator, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Flag,
}

#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<(Status, String)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn pass(&mut self, msg: impl Into<String>) {
        self.lines.push((Status::Pass, msg.into()));
    }

    pub fn flag(&mut self, msg: impl Into<String>) {
        self.lines.push((Status::Flag, msg.into()));
    }

    pub fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if ok {
            self.pass(msg);
        } else {
            self.flag(msg);
        }
    }

    pub fn flags(&self) -> usize {
        self.lines.iter().filter(|(s, _)| *s == Status::Flag).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (status, msg) in &self.lines {
            let tag = match status {
                Status::Pass => "PASS",
                Status::Flag => "FLAG",
            };
            out.push_str(tag);
            out.push(' ');
            out.push_str(msg);
            out.push('\n');
        }
        out.push_str(&format!(
            "{} checks, {} flagged\n",
            self.lines.len(),
            self.flags()
        ));
        out
    }
}

/// effective.csv: one row per tensor entry.
pub fn effective_csv(eff: &EffectiveTensors) -> String {
    let mut out = String::from("i,j,alpha,beta,value,tensor\n");
    for (tensor, i, j, al, be, value) in eff.csv_rows() {
        out.push_str(&format!("{i},{j},{al},{be},{},{tensor}\n", fmt_num(value)));
    }
    out
}

/// rates.csv: one row per (preset, table, point); exact fits carry the
/// literal `exact` in the slope and residual columns.
pub fn rates_csv(entries: &[(String, RateReport)]) -> String {
    let mut out = String::from("preset,eps,norm_id,error,slope,residual\n");
    for (label, report) in entries {
        for table in &report.tables {
            let (slope, residual) = match table.fit {
                FitOutcome::Exact => ("exact".to_string(), "exact".to_string()),
                FitOutcome::Fit { slope, residual } => (fmt_num(slope), fmt_num(residual)),
            };
            for &(eps, err) in &table.points {
                out.push_str(&format!(
                    "{},{},{},{},{slope},{residual}\n",
                    csv_field(label),
                    fmt_num(eps),
                    csv_field(&table.label),
                    fmt_num(err)
                ));
            }
        }
    }
    out
}

/// Node field export: one row per (node, component).
pub fn field_csv(u: &crate::solver::Field) -> String {
    let mut out = String::from("x,y,component,value\n");
    let h = 1.0 / u.cells as f64;
    for j in 0..=u.cells {
        for i in 0..=u.cells {
            for al in 0..u.m {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_num(i as f64 * h),
                    fmt_num(j as f64 * h),
                    al + 1,
                    fmt_num(u.get(i, j, al))
                ));
            }
        }
    }
    out
}

/// green_report.csv: the pointwise bound samples for one eps sweep.
pub fn green_csv(rows: &[(f64, &BoundReport)]) -> String {
    let mut out = String::from("ineq_id,eps,x1,x2,y1,y2,lhs,bound,ratio\n");
    for (eps, report) in rows {
        for r in &report.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.ineq,
                fmt_num(*eps),
                fmt_num(r.x.0),
                fmt_num(r.x.1),
                fmt_num(r.pole.0),
                fmt_num(r.pole.1),
                fmt_num(r.lhs),
                fmt_num(r.bound),
                fmt_num(r.ratio)
            ));
        }
    }
    out
}
