//! Machine-readable outputs of a run.

use std::fs;
use std::path::{Path, PathBuf};

use aqisense_core::data::digest_hex;
use aqisense_core::fed::{GlobalEvaluation, RoundEntry, Swarm};
use aqisense_core::mobilenet::ModelSummary;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const REPORT_FORMAT: &str = "aqisense-report 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub source: String,
    pub samples: usize,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub dataset_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub id: String,
    pub swarm: Swarm,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub descriptor: String,
    pub summary: ModelSummary,
    pub mac_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedReport {
    pub clients: Vec<ClientSummary>,
    pub public_samples: usize,
    pub rounds: Vec<RoundEntry>,
    pub converged: bool,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Encoded updates scanned for raw image bytes.
    pub updates_scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseByHorizon {
    pub gclstm: Vec<f64>,
    pub persistence: Vec<f64>,
    pub no_graph: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub source: String,
    pub stations: Vec<String>,
    pub features: Vec<String>,
    pub train_windows: usize,
    pub test_windows: usize,
    pub descriptor: String,
    pub params: usize,
    pub epoch_losses: Vec<f64>,
    pub rmse: RmseByHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedImage {
    pub file: String,
    pub image_digest: String,
    pub stack: String,
    pub diagnostics: aqisense_core::haze::Diagnostics,
}

/// Everything a run produced, keyed by the exact resolved configuration.
/// Wall-clock timings live in `timings.json` so reports stay byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub run_id: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub federated: Option<FederatedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<GlobalEvaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extracted: Option<Vec<ExtractedImage>>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let snapshot = serde_json::to_vec(config).expect("config serializes");
        let mut id_src = command.as_bytes().to_vec();
        id_src.extend_from_slice(&snapshot);
        Self {
            format: REPORT_FORMAT.into(),
            run_id: digest_hex(&id_src)[..16].to_string(),
            command: command.into(),
            config: config.clone(),
            dataset: None,
            model: None,
            federated: None,
            evaluation: None,
            forecast: None,
            extracted: None,
        }
    }
}

/// One forecast value for `forecast.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastRow {
    pub station: String,
    pub timestamp: String,
    pub horizon: usize,
    pub y: f64,
    pub y_hat: f64,
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(aqisense_core::Error::from)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn write_report(dir: &Path, report: &Report) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let p = dir.join("report.json");
    write_json(&p, report)?;
    Ok(p)
}

pub fn write_forecast_csv(path: &Path, rows: &[ForecastRow]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).map_err(aqisense_core::Error::from)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    write_file(path, &buf)
}

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Stage durations in the order they ran.
#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, seconds: f64) {
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("timings.json"), self)
    }
}
