//! Run reports: JSON for the whole report, CSV for the per-function table.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::reduce::Estimate;

pub const REPORT_SCHEMA: &str = "ibplab-report/1";

/// One paired identity `E[a] = E[b]` evaluated on shared paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub name: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub diff: Estimate,
    pub z: f64,
    pub dt: f64,
    /// Paired difference on the bridged `dt/2` grid.
    pub richardson: Option<Estimate>,
    pub kappa: f64,
    pub threshold: f64,
    /// `Var(a − b) / (Var(a) + Var(b))`; below 1 when pairing helps.
    pub variance_ratio: f64,
    pub pass: bool,
}

/// Bias coefficient `max(κ_min, 2|m(dt) − m(dt/2)|/dt)`.
pub fn bias_kappa(diff: &Estimate, richardson: Option<&Estimate>, dt: f64, kappa_min: f64) -> f64 {
    match richardson {
        Some(half) => kappa_min.max(2.0 * (diff.mean - half.mean).abs() / dt),
        None => kappa_min,
    }
}

impl FunctionReport {
    /// Applies `|mean| ≤ z_max·SE + κ·dt` to the finest available estimate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        lhs: Estimate,
        rhs: Estimate,
        diff: Estimate,
        variance_ratio: f64,
        dt: f64,
        richardson: Option<Estimate>,
        z_max: f64,
        kappa_min: f64,
    ) -> Self {
        let kappa = bias_kappa(&diff, richardson.as_ref(), dt, kappa_min);
        let threshold = z_max * diff.se + kappa * dt;
        Self {
            name: name.into(),
            lhs,
            rhs,
            diff,
            z: finite_or_zero(diff.z()),
            dt,
            richardson,
            kappa,
            threshold,
            variance_ratio,
            pass: diff.mean.abs() <= threshold,
        }
    }
}

/// A named scalar test with its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value ≤ threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: finite_or_max(value),
            threshold: finite_or_max(threshold),
            pass: value <= threshold,
            detail: detail.into(),
        }
    }

    /// Passes when `|est.mean − target| ≤ z_max·SE`.
    pub fn within_se(name: impl Into<String>, est: &Estimate, target: f64, z_max: f64) -> Self {
        let dev = (est.mean - target).abs();
        let mut c = Self::at_most(name, dev, z_max * est.se, "");
        c.detail = format!("mean {:.6e} ± {:.3e} vs {target}", est.mean, est.se);
        c
    }
}

/// JSON has no infinities; these clamp so a report always round-trips.
fn finite_or_max(x: f64) -> f64 {
    if x.is_nan() {
        f64::MAX
    } else {
        x.clamp(-f64::MAX, f64::MAX)
    }
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x.is_nan() {
        0.0
    } else {
        x.signum() * f64::MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub paths: u64,
    pub steps: usize,
    pub dt: f64,
    pub functions: Vec<FunctionReport>,
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
    /// Command-specific payload (oracle matrices, Fomin tables, ...).
    pub data: BTreeMap<String, Value>,
    pub passed: bool,
}

impl McReport {
    pub fn new(command: impl Into<String>, config_hash: impl Into<String>, seed: u64, paths: u64, steps: usize, dt: f64) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            command: command.into(),
            config_hash: config_hash.into(),
            seed,
            paths,
            steps,
            dt,
            functions: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            data: BTreeMap::new(),
            passed: false,
        }
    }

    pub fn insert<T: Serialize>(&mut self, key: &str, value: &T) {
        self.data
            .insert(key.to_string(), serde_json::to_value(value).expect("report data serializes"));
    }

    /// Sets `passed` from every function and check.
    pub fn finish(mut self) -> Self {
        self.passed = self.functions.iter().all(|f| f.pass) && self.checks.iter().all(|c| c.pass);
        self
    }

    pub fn failures(&self) -> Vec<String> {
        self.functions
            .iter()
            .filter(|f| !f.pass)
            .map(|f| format!("function {}: |{:.3e}| > {:.3e}", f.name, f.diff.mean, f.threshold))
            .chain(
                self.checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(|c| format!("check {}: {:.3e} > {:.3e}", c.name, c.value, c.threshold)),
            )
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-function table.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record([
            "function", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "diff_mean", "diff_se", "z", "dt",
            "richardson_mean", "richardson_se", "kappa", "threshold", "variance_ratio", "pass",
        ])
        .map_err(io)?;
        for f in &self.functions {
            let (rm, rs) = f
                .richardson
                .map_or((String::new(), String::new()), |r| (r.mean.to_string(), r.se.to_string()));
            out.write_record([
                f.name.clone(),
                f.lhs.mean.to_string(),
                f.lhs.se.to_string(),
                f.rhs.mean.to_string(),
                f.rhs.se.to_string(),
                f.diff.mean.to_string(),
                f.diff.se.to_string(),
                f.z.to_string(),
                f.dt.to_string(),
                rm,
                rs,
                f.kappa.to_string(),
                f.threshold.to_string(),
                f.variance_ratio.to_string(),
                f.pass.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Checks table.
    pub fn write_checks_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(["check", "value", "threshold", "pass", "detail"]).map_err(io)?;
        for c in &self.checks {
            out.write_record([
                c.name.clone(),
                c.value.to_string(),
                c.threshold.to_string(),
                c.pass.to_string(),
                c.detail.clone(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}
