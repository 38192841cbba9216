//! Machine-readable run reports.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A numeric check with its tolerance and signed margin (`>= 0` passes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: &'static str,
    pub tolerance: f64,
    pub margin: f64,
    pub passed: bool,
}

impl Check {
    /// `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::build(name, value, "<=", tolerance, tolerance - value)
    }

    /// `value >= tolerance`.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::build(name, value, ">=", tolerance, value - tolerance)
    }

    /// `|value - target| <= tolerance`; reported as the deviation.
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let dev = (value - target).abs();
        Self::build(name, dev, "|x - target| <=", tolerance, tolerance - dev)
    }

    /// A check whose outcome is decided elsewhere, reported with its margin.
    pub fn outcome(
        name: impl Into<String>,
        value: f64,
        tolerance: f64,
        margin: f64,
        passed: bool,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "see margin",
            tolerance,
            margin,
            passed,
        }
    }

    fn build(
        name: impl Into<String>,
        value: f64,
        relation: &'static str,
        tolerance: f64,
        margin: f64,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            relation,
            tolerance,
            margin,
            passed: margin >= 0.0,
        }
    }
}

/// Timing checks are kept apart: they are the only nondeterministic content.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub name: String,
    pub seconds: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub schema: u32,
    pub inputs_digest: String,
    pub results: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub timings: Vec<Timing>,
    pub wall_clock_s: f64,
}

impl Report {
    pub fn new(
        command: impl Into<String>,
        inputs_digest: String,
        results: Value,
        checks: Vec<Check>,
    ) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self {
            command: command.into(),
            schema: crate::config::SCHEMA_VERSION,
            inputs_digest,
            results,
            checks,
            passed,
            timings: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn with_timings(mut self, timings: Vec<Timing>) -> Self {
        self.passed &= timings.iter().all(|t| t.passed);
        self.timings = timings;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The report with timing fields removed, for determinism comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        let obj = v.as_object_mut().expect("reports are objects");
        obj.remove("wall_clock_s");
        obj.remove("timings");
        serde_json::to_string_pretty(&v).expect("values serialize")
    }
}

/// SHA-256 over the command and the canonical form of its inputs.
pub fn digest(command: &str, inputs: &impl Serialize) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(inputs).expect("inputs serialize"));
    hex::encode(h.finalize())
}

pub fn to_value(x: &impl Serialize) -> Value {
    serde_json::to_value(x).expect("results serialize")
}
