use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::kernels::PROFILE_ID;
use crate::manifest::{RunManifest, CODE_VERSION};

/// How a reported number was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Exact,
    Quadrature,
    MonteCarlo,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Exact => "exact",
            Estimator::Quadrature => "quadrature",
            Estimator::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub eps: Option<f64>,
    pub map: Option<String>,
    pub value: f64,
    pub estimator: Estimator,
    pub stderr: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub replica: Option<usize>,
    pub value: bool,
    /// Signed margin of the defining inequality (positive when it holds).
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub kernel_profile: String,
    pub seeds: Vec<u64>,
    /// Label of the stand-in used for the limiting metric, if any.
    pub reference: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub metrics: Vec<Metric>,
    pub indicators: Vec<Indicator>,
    pub checks: Vec<Check>,
    pub provenance: Provenance,
    pub manifest: Option<RunManifest>,
}

impl ExperimentReport {
    pub fn new(name: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            experiment: name.to_string(),
            config: cfg.clone(),
            metrics: Vec::new(),
            indicators: Vec::new(),
            checks: Vec::new(),
            provenance: Provenance {
                code_version: CODE_VERSION.to_string(),
                kernel_profile: PROFILE_ID.to_string(),
                seeds: vec![cfg.experiment.seed],
                reference: None,
            },
            manifest: None,
        }
    }

    pub fn metric(&mut self, name: &str, eps: Option<f64>, map: Option<&str>, value: f64, estimator: Estimator) -> &mut Metric {
        self.metrics.push(Metric {
            name: name.to_string(),
            eps,
            map: map.map(str::to_string),
            value,
            estimator,
            stderr: None,
            ci: None,
        });
        self.metrics.last_mut().expect("just pushed")
    }

    pub fn indicator(&mut self, name: &str, replica: Option<usize>, value: bool, slack: Option<f64>) {
        self.indicators.push(Indicator { name: name.to_string(), replica, value, slack });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Metrics named `name`, in insertion order.
    pub fn values(&self, name: &str) -> Vec<f64> {
        self.metrics.iter().filter(|m| m.name == name).map(|m| m.value).collect()
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Per-metric table: `experiment,name,eps,map,value,estimator,stderr,ci_lo,ci_hi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["experiment", "name", "eps", "map", "value", "estimator", "stderr", "ci_lo", "ci_hi"])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.17e}")).unwrap_or_default();
        for m in &self.metrics {
            w.write_record([
                self.experiment.clone(),
                m.name.clone(),
                opt(m.eps),
                m.map.clone().unwrap_or_default(),
                format!("{:.17e}", m.value),
                m.estimator.label().to_string(),
                opt(m.stderr),
                opt(m.ci.map(|c| c.0)),
                opt(m.ci.map(|c| c.1)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
