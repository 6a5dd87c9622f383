use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Policy, RunConfig};
use crate::costmodel::CostLedger;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request: usize,
    pub time: f64,
    pub scenario: usize,
    pub accuracy: f64,
    /// Mean energy score over the request's samples.
    pub energy_score: f64,
    /// Rounds whose model was visible when the request was served.
    pub rounds_completed: u64,
    pub batches_needed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundInfo {
    pub round: u64,
    pub start_time: f64,
    pub end_time: f64,
    /// Scenario of the round's last batch.
    pub scenario: usize,
    pub batches: u64,
    pub iterations: u64,
    pub mean_loss: f64,
    /// Present when the policy fits a learning curve.
    pub val_accuracy: Option<f64>,
    pub frozen_layers: usize,
    pub flops: u64,
    pub cka_flops: u64,
    pub time: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezeChange {
    pub time: f64,
    pub iteration: u64,
    pub frozen: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCause {
    Start,
    Inference,
    Round,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub time: f64,
    pub batches_needed: f64,
    pub cause: ThresholdCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: Policy,
    pub seed: u64,
    pub avg_inference_accuracy: f64,
    pub total_time: f64,
    pub total_energy: f64,
    pub round_count: u64,
    pub total_flops: u64,
    pub total_cka_flops: u64,
    pub requests: Vec<RequestRecord>,
    pub rounds: Vec<RoundInfo>,
    pub frozen_timeline: Vec<FreezeChange>,
    pub batches_needed_timeline: Vec<ThresholdPoint>,
    /// Times at which a scenario change was acted on.
    pub detections: Vec<f64>,
    /// Labelled scenario boundaries of the stream.
    pub boundaries: Vec<f64>,
    pub warnings: Vec<String>,
    pub ledger: CostLedger,
    pub config: RunConfig,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn requests_csv(&self) -> Result<String> {
        to_csv(&self.requests)
    }

    pub fn rounds_csv(&self) -> Result<String> {
        to_csv(&self.rounds)
    }

    /// Writes `report.json`, `requests.csv` and `rounds.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        fs::write(dir.join("requests.csv"), self.requests_csv()?)?;
        fs::write(dir.join("rounds.csv"), self.rounds_csv()?)?;
        Ok(())
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
