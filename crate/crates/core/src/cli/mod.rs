//! Experiment runner: a JSON config names an experiment, a seed, a
//! replicate count and experiment-specific parameters; `run` validates the
//! parameters, dispatches to the library and returns a [`Report`] whose
//! pass/fail entries drive the exit code of the `ptm` binary.
//!
//! Reports are deterministic in `(seed, replicates, params)`: replicate `i`
//! draws from the stream seeded by [`crate::rng::stream_seed`]`(seed, i)`
//! and results are aggregated in replicate order, so the thread count does
//! not change a single byte of the output.

mod experiments;
mod report;
mod spec;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use report::{emit, render, write_canonical_json, Check, CheckKind, Format, Report, CSV_COLUMNS, SCHEMA_VERSION};
pub use spec::{FamilySpec, FunctionSpec, LawSpec, MarkSpec, SpatialSpec};

use crate::error::{Error, Result};

/// Experiments understood by [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BoneCheck,
    ThinVerify,
    Compound,
    Sir,
    Traffic,
    Laplace,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::BoneCheck => "bone-check",
            ExperimentKind::ThinVerify => "thin-verify",
            ExperimentKind::Compound => "compound",
            ExperimentKind::Sir => "sir",
            ExperimentKind::Traffic => "traffic",
            ExperimentKind::Laplace => "laplace",
        }
    }

    /// Whether the experiment draws replicates.
    pub fn is_monte_carlo(self) -> bool {
        self != ExperimentKind::BoneCheck
    }
}

/// One experiment, as read from a JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub replicates: u64,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error("config", e))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks the replicate count and every parameter without running.
    pub fn validate(&self) -> Result<()> {
        experiments::prepare(self).map(|_| ())
    }

    pub(crate) fn replicates(&self) -> Result<usize> {
        if self.experiment.is_monte_carlo() && self.replicates == 0 {
            return Err(Error::Config {
                field: "replicates".into(),
                reason: format!("{} needs at least one replicate", self.experiment.as_str()),
            });
        }
        usize::try_from(self.replicates)
            .map_err(|_| Error::Config { field: "replicates".into(), reason: "too large for this platform".into() })
    }
}

pub(crate) fn config_error(field: &str, err: impl std::fmt::Display) -> Error {
    Error::Config { field: field.into(), reason: err.to_string() }
}

/// Validates `config`, runs the experiment and collects its checks.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    let prepared = experiments::prepare(config)?;
    let (results, checks) = experiments::execute(config, prepared)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    log::info!("{} finished in {wall_clock_seconds:.3} s", config.experiment.as_str());
    Ok(Report::new(config.clone(), results, checks, wall_clock_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn zero_replicates_is_rejected_for_monte_carlo_runs() {
        let c = config(r#"{"experiment":"thin-verify","seed":1,"replicates":0,"params":{"law":{"kind":"poisson","lambda":2},"a":0.5}}"#);
        assert_eq!(field_of(run(&c).unwrap_err()), "replicates");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"experiment":"sir","seed":1,"replicates":5,"extra":1}"#).unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
        let c = config(r#"{"experiment":"thin-verify","seed":1,"replicates":10,"params":{"law":{"kind":"poisson","lambda":2},"a":0.5,"b":1}}"#);
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
    }

    #[test]
    fn numeric_preconditions_name_the_field() {
        let c = config(r#"{"experiment":"thin-verify","seed":1,"replicates":10,"params":{"law":{"kind":"poisson","lambda":-2},"a":0.5}}"#);
        assert_eq!(field_of(c.validate().unwrap_err()), "params.lambda");
        let c = config(r#"{"experiment":"thin-verify","seed":1,"replicates":10,"params":{"law":{"kind":"poisson","lambda":2},"a":1.5}}"#);
        assert_eq!(field_of(c.validate().unwrap_err()), "params.a");
        let c = config(r#"{"experiment":"sir","seed":1,"replicates":10,"params":{"beta":0.5,"gamma":1,"rho":0.01,"n":20,"times":[1]}}"#);
        assert!(field_of(c.validate().unwrap_err()).starts_with("params."));
    }

    #[test]
    fn bone_check_reports_not_bone_for_a_cubic() {
        let c = config(
            r#"{"experiment":"bone-check","seed":0,"params":{"family":{"kind":"coefficients","coeffs":[1,1,0,1]},"theta":0.5,"a":0.5,"expect":"NotBone"}}"#,
        );
        let report = run(&c).unwrap();
        assert!(report.passed);
        assert_eq!(report.results["verdict"]["classification"], "NotBone");
    }

    #[test]
    fn bone_check_accepts_pt_families() {
        let c = config(
            r#"{"experiment":"bone-check","seed":0,"params":{"family":{"kind":"negative_binomial","r":2.5},"theta":0.3,"a":0.4,"expect":"PositiveLog"}}"#,
        );
        let report = run(&c).unwrap();
        assert!(report.passed, "{:?}", report.checks);
    }

    #[test]
    fn reports_echo_their_config_and_version() {
        let c = config(r#"{"experiment":"thin-verify","seed":42,"replicates":2000,"params":{"law":{"kind":"binomial","n":8,"p":0.3},"a":0.25}}"#);
        let report = run(&c).unwrap();
        assert_eq!(report.schema_version, 1);
        assert!(report.version.starts_with('v'));
        let json = render(&report, Format::Json).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let echoed: ExperimentConfig = serde_json::from_value(value["config"].clone()).unwrap();
        assert_eq!(echoed, c);
        assert_eq!(render(&run(&echoed).unwrap(), Format::Json).unwrap(), json);
    }

    #[test]
    fn csv_summary_has_one_row_per_check() {
        let c = config(r#"{"experiment":"thin-verify","seed":3,"replicates":500,"params":{"law":{"kind":"poisson","lambda":1},"a":0.5}}"#);
        let report = run(&c).unwrap();
        let csv = render(&report, Format::CsvSummary).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines.len(), report.checks.len() + 1);
        assert!(lines.iter().all(|l| l.split(',').count() == CSV_COLUMNS.len()));
    }
}
