//! Versioned JSON run reports.
//!
//! Everything except `timings` and `environment` is a pure function of the
//! run configuration, so two runs with the same flags produce identical
//! [`Report::body`] strings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: &str = "chimera-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// Non-finite measurements are written as `null`.
    #[serde(with = "nullable_f64")]
    pub measured: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    /// Passes when `measured <= tolerance` (and is not NaN).
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let status = if measured <= tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, measured, tolerance, note: None }
    }

    /// Passes when `measured < tolerance` (and is not NaN).
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let status = if measured < tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, measured, tolerance, note: None }
    }

    /// Passes when `measured == expected` exactly (for counters).
    pub fn exactly(name: impl Into<String>, measured: f64, expected: f64) -> Self {
        let status = if measured == expected { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, measured, tolerance: expected, note: None }
    }

    /// Passes when `lo <= measured <= hi`; `tolerance` records `hi`.
    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        let status = if (lo..=hi).contains(&measured) { Status::Pass } else { Status::Fail };
        Check { name: name.into(), status, measured, tolerance: hi, note: Some(format!("range [{lo}, {hi}]")) }
    }

    pub fn skip(name: impl Into<String>, why: impl Into<String>) -> Self {
        Check { name: name.into(), status: Status::Skip, measured: 0.0, tolerance: 0.0, note: Some(why.into()) }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_ms: f64,
    /// Exact count of dense matrix products, where the command tracks one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matmul_count: Option<usize>,
    /// Machine-dependent measurements (bench rows, fitted slopes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    pub fn current(threads: usize) -> Self {
        Environment {
            package_version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    /// Command-specific results (bench rows, training curve, output, ...).
    #[serde(default)]
    pub results: serde_json::Value,
    pub timings: Timings,
    pub environment: Environment,
}

impl Report {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Report {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            command: command.into(),
            config,
            checks: Vec::new(),
            results: serde_json::Value::Null,
            timings: Timings::default(),
            environment: Environment::current(1),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// The deterministic part of the report.
    pub fn body(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report is serializable");
        let map = v.as_object_mut().expect("report is an object");
        map.remove("timings");
        map.remove("environment");
        serde_json::to_string_pretty(&v).expect("report is serializable")
    }

    /// Human-readable summary, one line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            match (&c.status, &c.note) {
                (Status::Skip, Some(note)) => out.push_str(&format!("{status}  {:<40} {note}\n", c.name)),
                _ => out.push_str(&format!("{status}  {:<40} measured {:.3e} (tol {:.3e})\n", c.name, c.measured, c.tolerance)),
            }
        }
        out.push_str(&format!("{} checks, {} failed, {:.1} ms\n", self.checks.len(), self.failures(), self.timings.wall_ms));
        out
    }
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Wall-clock stopwatch in milliseconds.
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    pub fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_never_passes() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed());
        assert!(!Check::below("x", 1.0, 1.0).passed());
        assert!(Check::at_most("x", 1.0, 1.0).passed());
        assert!(Check::skip("x", "n/a").passed());
    }

    #[test]
    fn body_ignores_timings_and_environment() {
        let mut a = Report::new("verify", serde_json::json!({"seed": 1}));
        a.push(Check::below("row-sum", 0.25, 0.5));
        let mut b = a.clone();
        b.timings.wall_ms = 123.0;
        b.environment.threads = 8;
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(a.body(), b.body());
        let parsed: Report = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(parsed, a);
    }

    #[test]
    fn non_finite_measurements_survive_serialization() {
        let mut r = Report::new("train", serde_json::Value::Null);
        r.push(Check::below("loss", f64::INFINITY, 1.0));
        let parsed: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert!(parsed.checks[0].measured.is_nan());
        assert_eq!(parsed.checks[0].status, Status::Fail);
    }
}
