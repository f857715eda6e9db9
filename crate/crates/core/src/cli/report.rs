use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::ExperimentConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Columns of the `csv-summary` format, one row per check.
pub const CSV_COLUMNS: [&str; 8] = ["experiment", "kind", "name", "analytic", "empirical", "stderr", "threshold", "passed"];

/// How a check's `threshold` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `|empirical - analytic| ≤ threshold · stderr`.
    StderrBand,
    /// Chi-square goodness of fit; `empirical` is the p-value and must be
    /// at least `threshold`.
    ChiSquare,
    /// `empirical ≤ threshold`.
    AtMost,
    /// `empirical > threshold`.
    Above,
    /// `expected == observed`.
    Verdict,
}

/// One pass/fail entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub analytic: Option<f64>,
    pub empirical: Option<f64>,
    pub stderr: Option<f64>,
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
    pub passed: bool,
}

impl Check {
    fn base(name: impl Into<String>, kind: CheckKind) -> Self {
        Check {
            name: name.into(),
            kind,
            analytic: None,
            empirical: None,
            stderr: None,
            threshold: None,
            expected: None,
            observed: None,
            passed: false,
        }
    }

    pub fn stderr_band(name: impl Into<String>, analytic: f64, empirical: f64, stderr: f64, k: f64) -> Self {
        Check {
            analytic: Some(analytic),
            empirical: Some(empirical),
            stderr: Some(stderr),
            threshold: Some(k),
            passed: (empirical - analytic).abs() <= k * stderr,
            ..Self::base(name, CheckKind::StderrBand)
        }
    }

    pub fn chi_square(name: impl Into<String>, fit: &crate::stats::ChiSquareOutcome) -> Self {
        Check {
            empirical: Some(fit.p_value),
            threshold: Some(crate::stats::CHI_SQUARE_ALPHA),
            passed: fit.passed,
            ..Self::base(name, CheckKind::ChiSquare)
        }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { empirical: Some(value), threshold: Some(threshold), passed: value <= threshold, ..Self::base(name, CheckKind::AtMost) }
    }

    pub fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { empirical: Some(value), threshold: Some(threshold), passed: value > threshold, ..Self::base(name, CheckKind::Above) }
    }

    pub fn verdict(name: impl Into<String>, expected: impl Into<String>, observed: impl Into<String>) -> Self {
        let (expected, observed) = (expected.into(), observed.into());
        Check { passed: expected == observed, expected: Some(expected), observed: Some(observed), ..Self::base(name, CheckKind::Verdict) }
    }

    pub fn with_analytic(mut self, analytic: f64) -> Self {
        self.analytic = Some(analytic);
        self
    }
}

/// Outcome of one experiment.
///
/// Wall-clock time is kept out of the serialized form so that reports are
/// byte-identical across runs; [`super::run`] logs it instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub results: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl Report {
    pub fn new(config: ExperimentConfig, results: Value, checks: Vec<Check>, wall_clock_seconds: f64) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            version: version_string(),
            passed: checks.iter().all(|c| c.passed),
            config,
            results,
            checks,
            wall_clock_seconds,
        }
    }
}

fn version_string() -> String {
    option_env!("PTM_GIT_DESCRIBE").map(str::to_owned).unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    CsvSummary,
}

/// Formats a float with 17 significant digits; non-finite values become
/// `null`.
fn fmt_float(out: &mut String, x: f64) {
    if x.is_finite() {
        write!(out, "{x:.16e}").expect("string write");
    } else {
        out.push_str("null");
    }
}

/// Compact JSON with object keys sorted and floats at 17 significant digits.
pub fn write_canonical_json(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                write!(out, "{u}").expect("string write");
            } else if let Some(i) = n.as_i64() {
                write!(out, "{i}").expect("string write");
            } else {
                fmt_float(out, n.as_f64().unwrap_or(f64::NAN));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical_json(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("string serializes"));
                out.push(':');
                write_canonical_json(&map[k], out);
            }
            out.push('}');
        }
    }
}

fn csv_float(out: &mut String, x: Option<f64>) {
    match x {
        Some(v) if v.is_finite() => write!(out, "{v:.16e}").expect("string write"),
        Some(v) => write!(out, "{v}").expect("string write"),
        None => {}
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Renders a report in the requested format.
pub fn render(report: &Report, format: Format) -> Result<String> {
    let mut out = String::new();
    match format {
        Format::Json => {
            let value = serde_json::to_value(report).map_err(|e| Error::Numeric(format!("report serialization: {e}")))?;
            write_canonical_json(&value, &mut out);
            out.push('\n');
        }
        Format::CsvSummary => {
            out.push_str(&CSV_COLUMNS.join(","));
            out.push('\n');
            let experiment = report.config.experiment.as_str();
            for c in &report.checks {
                let kind = serde_json::to_value(c.kind).expect("enum serializes");
                write!(out, "{experiment},{},{},", kind.as_str().unwrap_or_default(), csv_field(&c.name)).expect("string write");
                csv_float(&mut out, c.analytic);
                out.push(',');
                csv_float(&mut out, c.empirical);
                out.push(',');
                csv_float(&mut out, c.stderr);
                out.push(',');
                csv_float(&mut out, c.threshold);
                writeln!(out, ",{}", c.passed).expect("string write");
            }
        }
    }
    Ok(out)
}

/// Writes the rendered report to `path`.
pub fn emit(report: &Report, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let text = render(report, format)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_keys_and_fixes_precision() {
        let v: Value = serde_json::from_str(r#"{"b":0.1,"a":[1,-2,1e300],"c":{"z":null,"y":"x,\"q"}}"#).unwrap();
        let mut out = String::new();
        write_canonical_json(&v, &mut out);
        assert_eq!(out, r#"{"a":[1,-2,1.0000000000000001e300],"b":1.0000000000000001e-1,"c":{"y":"x,\"q","z":null}}"#);
        let back: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
    }

    #[test]
    fn seventeen_digits_round_trip_every_float() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, 5e-324, f64::MAX, -0.7290155042155246] {
            let mut s = String::new();
            fmt_float(&mut s, x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn check_constructors_apply_thresholds() {
        assert!(Check::stderr_band("m", 1.0, 1.3, 0.1, 4.0).passed);
        assert!(!Check::stderr_band("m", 1.0, 1.5, 0.1, 4.0).passed);
        assert!(Check::at_most("r", 1e-13, 1e-12).passed);
        assert!(!Check::above("r", 1e-4, 1e-4).passed);
        assert!(Check::verdict("v", "zero", "zero").passed);
    }

    #[test]
    fn csv_fields_are_quoted_when_needed() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
