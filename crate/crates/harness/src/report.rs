//! Serializable experiment and verification reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedcog_core::fedprop::CostMeter;
use fedcog_core::fedtrain::RoundRecord;
use fedcog_core::partition::PartitionStats;
use fedcog_core::privacy::LnncAuditRow;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PropagationMode};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LnncSummary {
    pub exposed_before: usize,
    pub exposed_after: usize,
    pub edges_added: usize,
    pub skipped: usize,
    pub parties: Vec<LnncAuditRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub mode: PropagationMode,
    pub partition: PartitionStats,
    pub lnnc: Option<LnncSummary>,
    pub num_placeholders: usize,
    pub propagation_cost: CostMeter,
    /// Parameter floats uploaded over all rounds.
    pub training_floats_sent: u64,
    pub history: Vec<RoundRecord>,
    /// `accuracy` or `auc`.
    pub metric_name: String,
    pub final_metric: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// History as one JSON object per line.
    pub fn history_lines(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.history {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the report to `path` and the history to `<path>.history.jsonl`.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        write_file(path, &self.to_json()?)?;
        let mut history_path = path.as_os_str().to_owned();
        history_path.push(".history.jsonl");
        let history_path = PathBuf::from(history_path);
        write_file(&history_path, &self.history_lines()?)?;
        Ok(history_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: usize,
    pub max_relative_error: f64,
    /// Node holding the largest error, with its owner.
    pub worst_node: usize,
    pub worst_party: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub variant: String,
    pub layers: usize,
    pub parts: usize,
    pub tolerance: f64,
    pub per_layer: Vec<LayerCheck>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn max_error(&self) -> f64 {
        self.per_layer.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    let io = |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(body.as_bytes()).map_err(io)
}
