//! JSON shapes of everything the commands write.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fusionet_core::metrics::{EvalReport, MetricStd, RecoveryReport};
use fusionet_core::training::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BUILD_ID: &str = env!("FUSIONET_BUILD_ID");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReportJson {
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
    pub mr_class0: Option<f64>,
    pub mr_class1: Option<f64>,
    pub mr_combined: f64,
    pub seeds: Vec<EvalReportJson>,
    pub std: Option<MetricStdJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStdJson {
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub auc: Option<f64>,
    pub mr_class0: Option<f64>,
    pub mr_class1: Option<f64>,
    pub mr_combined: f64,
}

impl From<&MetricStd> for MetricStdJson {
    fn from(s: &MetricStd) -> Self {
        Self {
            precision: s.precision,
            recall: s.recall,
            weighted_f1: s.weighted_f1,
            auc: s.auc,
            mr_class0: s.mr_class0,
            mr_class1: s.mr_class1,
            mr_combined: s.mr_combined,
        }
    }
}

impl From<&EvalReport> for EvalReportJson {
    fn from(r: &EvalReport) -> Self {
        Self {
            precision: r.precision,
            recall: r.recall,
            weighted_f1: r.weighted_f1,
            auc: r.auc,
            mr_class0: r.mr_class0,
            mr_class1: r.mr_class1,
            mr_combined: r.mr_combined,
            seeds: r.seeds.iter().map(Into::into).collect(),
            std: r.std.as_ref().map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCellJson {
    pub source: String,
    pub target: String,
    pub f1: f64,
    pub ratio: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReportJson {
    pub cells: Vec<RecoveryCellJson>,
}

impl From<&RecoveryReport> for RecoveryReportJson {
    fn from(r: &RecoveryReport) -> Self {
        Self {
            cells: r
                .cells
                .iter()
                .map(|c| RecoveryCellJson {
                    source: c.source.clone(),
                    target: c.target.clone(),
                    f1: c.f1,
                    ratio: c.ratio,
                    percent: c.percent,
                })
                .collect(),
        }
    }
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLine {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
    pub improved: bool,
}

impl From<&EpochRecord> for EpochLine {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_accuracy: r.train_accuracy,
            val_accuracy: r.val_accuracy,
            val_weighted_f1: r.val_weighted_f1,
            improved: r.improved,
        }
    }
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub score: f64,
    pub predicted: usize,
    #[serde(rename = "true")]
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub wall_seconds: Option<f64>,
}

/// Written when a command starts and rewritten when it finishes. Only
/// `timings` differs between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub output_dir: String,
    pub outputs: Vec<String>,
    pub details: serde_json::Map<String, serde_json::Value>,
    pub build_id: String,
    pub timings: Timings,
}

pub const RUN_MANIFEST: &str = "run.json";

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    /// Creates `out` and writes the initial manifest into it.
    pub fn start(
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        inputs: &[&Path],
        out: &Path,
    ) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let m = Self {
            command: command.into(),
            status: "running".into(),
            config,
            seeds,
            inputs: inputs.iter().map(|p| display_path(p)).collect(),
            output_dir: display_path(out),
            outputs: Vec::new(),
            details: serde_json::Map::new(),
            build_id: BUILD_ID.into(),
            timings: Timings {
                started_unix: now(),
                finished_unix: None,
                wall_seconds: None,
            },
        };
        m.write(out)?;
        Ok(m)
    }

    /// Checks that every named output exists, then records completion.
    pub fn finish(mut self, out: &Path) -> Result<Self> {
        for name in &self.outputs {
            if !out.join(name).exists() {
                return Err(Error::Config(format!("declared output {name} was not written")));
            }
        }
        let end = now();
        self.status = "complete".into();
        self.timings.finished_unix = Some(end);
        self.timings.wall_seconds = Some(end - self.timings.started_unix);
        self.write(out)?;
        Ok(self)
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join(RUN_MANIFEST), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(RUN_MANIFEST))
    }
}

/// Canonical form when the path exists, as given otherwise.
pub fn display_path(p: &Path) -> String {
    std::fs::canonicalize(p)
        .unwrap_or_else(|_| PathBuf::from(p))
        .display()
        .to_string()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("row serialises"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}
