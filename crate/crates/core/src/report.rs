//! Pass/fail checks of a run summary against a criteria file.
//!
//! One criterion per line: `name  metric  op  threshold`, where `metric` is a
//! dotted path into the summary JSON, `op` is one of `< <= > >= ==`, and
//! `threshold` is a number or another dotted path. Booleans compare as 0/1.
//!
//! ```text
//! final_tracking  final_e_t         <   1e-2
//! ultimate_bound  steady.max_e_inf  <=  bound.bound
//! ```

use std::fmt;

use serde_json::Value;
use thiserror::Error;

pub const TRACKING_CRITERIA: &str = include_str!("../scenarios/tracking.criteria");
pub const BOUND_CRITERIA: &str = include_str!("../scenarios/bound.criteria");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("criteria line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Op {
    fn parse(s: &str) -> Option<Op> {
        Some(match s {
            "<" => Op::Lt,
            "<=" => Op::Le,
            ">" => Op::Gt,
            ">=" => Op::Ge,
            "==" => Op::Eq,
            _ => return None,
        })
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            Op::Ge => a >= b,
            Op::Eq => a == b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub name: String,
    pub metric: String,
    pub op: Op,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "missing".to_string(), |x| format!("{x:.6e}"));
        write!(
            f,
            "{} {}: {} = {} {} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.metric,
            show(self.measured),
            self.op.symbol(),
            show(self.threshold)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceReport {
    pub results: Vec<CriterionResult>,
}

impl AcceptanceReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn failing(&self) -> impl Iterator<Item = &CriterionResult> {
        self.results.iter().filter(|r| !r.pass)
    }
}

impl fmt::Display for AcceptanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// Resolves `a.b.c` in a JSON document to a number.
pub fn lookup(summary: &Value, path: &str) -> Option<f64> {
    let mut v = summary;
    for part in path.split('.') {
        v = v.get(part)?;
    }
    match v {
        Value::Number(n) => n.as_f64(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

pub fn check_acceptance(summary: &Value, criteria: &str) -> Result<AcceptanceReport, ReportError> {
    let mut results = Vec::new();
    for (idx, raw) in criteria.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: String| ReportError::Malformed { line: idx + 1, msg };
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, metric, op, threshold] = parts[..] else {
            return Err(malformed(format!("expected `name metric op threshold`, got `{line}`")));
        };
        let op = Op::parse(op).ok_or_else(|| malformed(format!("unknown operator `{op}`")))?;
        let measured = lookup(summary, metric);
        let threshold = threshold.parse::<f64>().ok().or_else(|| lookup(summary, threshold));
        let pass = match (measured, threshold) {
            (Some(m), Some(t)) => op.holds(m, t),
            _ => false,
        };
        results.push(CriterionResult { name: name.to_string(), metric: metric.to_string(), op, measured, threshold, pass });
    }
    Ok(AcceptanceReport { results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn summary(final_e_t: f64, e_inf: f64, bound: f64) -> Value {
        json!({
            "final_e_t": final_e_t,
            "final_e_t_below_1e-2": final_e_t < 1e-2,
            "steady": { "max_e_inf": e_inf },
            "bound": { "bound": bound, "valid": true },
        })
    }

    #[test]
    fn all_pass() {
        let r = check_acceptance(&summary(1e-3, 0.5, 2.0), TRACKING_CRITERIA).unwrap();
        assert!(r.passed(), "{r}");
        let r = check_acceptance(&summary(1e-3, 0.5, 2.0), BOUND_CRITERIA).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn tracking_failure_is_named() {
        let r = check_acceptance(&summary(0.5, 0.5, 2.0), TRACKING_CRITERIA).unwrap();
        assert!(!r.passed());
        assert!(r.failing().any(|c| c.metric == "final_e_t"));
        assert!(r.to_string().contains("FAIL"));
    }

    #[test]
    fn bound_failure_names_ultimate_bound() {
        let r = check_acceptance(&summary(0.5, 3.0, 2.0), BOUND_CRITERIA).unwrap();
        let failing: Vec<_> = r.failing().map(|c| c.name.as_str()).collect();
        assert_eq!(failing, vec!["ultimate_bound"]);
    }

    #[test]
    fn missing_metric_fails() {
        let r = check_acceptance(&json!({}), "x nothing.here < 1\n").unwrap();
        assert!(!r.passed());
        assert!(r.to_string().contains("missing"));
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(check_acceptance(&json!({}), "a b <\n"), Err(ReportError::Malformed { line: 1, .. })));
        assert!(matches!(check_acceptance(&json!({}), "\n# c\na b ~ 1\n"), Err(ReportError::Malformed { line: 3, .. })));
    }

    #[test]
    fn booleans_and_paths() {
        let s = summary(1e-3, 0.5, 2.0);
        assert_eq!(lookup(&s, "final_e_t_below_1e-2"), Some(1.0));
        assert_eq!(lookup(&s, "bound.valid"), Some(1.0));
        assert_eq!(lookup(&s, "bound"), None);
    }
}
