//! CSV rows and the JSON run manifest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Scenario, ScenarioSource};

use super::config::ExperimentConfig;
use super::experiment::{ExperimentResult, ResultRow};

pub const CSV_HEADER: &[&str] = &[
    "experiment",
    "policy",
    "detector",
    "M",
    "P",
    "pd_emp",
    "pd_theory",
    "pfa_emp",
    "mse_emp",
    "mse_theory",
    "deflection",
    "bound_lo",
    "bound_hi",
    "stderr",
    "trials",
    "status",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record(row: &ResultRow) -> Vec<String> {
    vec![
        row.experiment.to_string(),
        row.policy.to_string(),
        row.detector.to_string(),
        row.antennas.to_string(),
        row.power.to_string(),
        cell(row.pd_emp),
        cell(row.pd_theory),
        cell(row.pfa_emp),
        cell(row.mse_emp),
        cell(row.mse_theory),
        cell(row.deflection),
        cell(row.bound_lo),
        cell(row.bound_hi),
        cell(row.stderr),
        row.trials.to_string(),
        row.status.clone(),
    ]
}

impl ExperimentResult {
    /// Header plus one line per row; floats in shortest round-trip form,
    /// empty cells where a column does not apply.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(io)?;
        for row in &self.rows {
            w.write_record(record(row)).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: self.config.master_seed,
            frozen_scenario: self.scenario.clone(),
            config: self.config.clone(),
        }
    }
}

pub const MANIFEST_FORMAT: u32 = 1;

/// Everything needed to reproduce a run's CSV byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub crate_version: String,
    pub master_seed: u64,
    pub frozen_scenario: Scenario,
    /// The config as run, before the scenario was resolved.
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::config(e.line(), format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::config(0, format!("unsupported manifest format {}", m.format)));
        }
        Ok(m)
    }

    /// The recorded config with the frozen scenario substituted for any
    /// sampling recipe, so a replay cannot drift if sampling changes.
    pub fn replay_config(&self) -> ExperimentConfig {
        let mut cfg = self.config.clone();
        cfg.scenario = ScenarioSource::Explicit(self.frozen_scenario.clone());
        cfg.master_seed = self.master_seed;
        cfg
    }
}
