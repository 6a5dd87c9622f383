//! Synthetic drifting classification streams and their arrival timelines.
//!
//! Every class is an isotropic Gaussian cluster. A scenario either adds
//! clusters (`new_class`), moves the existing ones with an affine transform
//! (`new_pattern`), or both (`mixed`). Training batches and inference
//! requests are then laid out in time by independent arrival processes.

mod arrival;
mod dataset;
mod events;

pub use arrival::{parse_trace, read_trace, ArrivalProcess, TraceKind};
pub use dataset::{generate_dataset, Dataset, Pool, ScenarioData};
pub use events::{generate_events, Event, EventKind, EventStats};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAX_CLASSES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NewClass,
    NewPattern,
    Mixed,
}

/// Rotation of every coordinate pair by `angle_deg`, then a shift.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Transform {
    pub angle_deg: f64,
    /// Added after rotation; missing trailing entries count as zero.
    pub shift: Vec<f64>,
}

impl Transform {
    pub fn is_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.shift.iter().all(|&s| s == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Every class present in this scenario's data.
    pub classes: Vec<usize>,
    #[serde(default)]
    pub transform: Transform,
    pub train_batches: usize,
    /// Relative share of inference requests. When every scenario leaves this
    /// unset, requests are spread over the stream in time instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub dims: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Expected distance between two class means, in units of `noise_std`.
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    pub test_per_scenario: usize,
    /// Leading scenarios used for pre-training and not streamed.
    #[serde(default = "default_pretrain")]
    pub pretrain_scenarios: usize,
    pub scenarios: Vec<ScenarioSpec>,
    pub train_arrival: ArrivalProcess,
    pub inference_arrival: ArrivalProcess,
    #[serde(default = "default_inferences")]
    pub total_inferences: usize,
    /// Samples per inference request.
    #[serde(default = "default_batch")]
    pub inference_batch: usize,
}

fn default_batch() -> usize {
    16
}
fn default_noise() -> f64 {
    1.0
}
fn default_pretrain() -> usize {
    1
}
fn default_inferences() -> usize {
    500
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims < 2 {
            return Err(Error::config("dims must be at least 2"));
        }
        if self.batch_size == 0 || self.inference_batch == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if !(self.separation > 0.0 && self.noise_std > 0.0) {
            return Err(Error::config("separation and noise_std must be positive"));
        }
        if self.scenarios.is_empty() {
            return Err(Error::config("at least one scenario is required"));
        }
        if self.pretrain_scenarios >= self.scenarios.len() {
            return Err(Error::config(
                "no scenario left to stream after pre-training",
            ));
        }
        if self.test_per_scenario < self.inference_batch {
            return Err(Error::config(
                "test pool smaller than one inference request",
            ));
        }
        let first = &self.scenarios[0];
        if !first.transform.is_identity() {
            return Err(Error::config(
                "the first scenario must use the identity transform",
            ));
        }
        let mut all = std::collections::BTreeSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.classes.is_empty() {
                return Err(Error::config(format!("scenario {i} has no classes")));
            }
            if s.train_batches == 0 {
                return Err(Error::config(format!(
                    "scenario {i} has no training batches"
                )));
            }
            if s.transform.shift.len() > self.dims {
                return Err(Error::config(format!(
                    "scenario {i} shift is longer than dims"
                )));
            }
            if s.inference_share.is_some_and(|v| !(v >= 0.0)) {
                return Err(Error::config(format!(
                    "scenario {i} inference_share must be >= 0"
                )));
            }
            all.extend(s.classes.iter().copied());
        }
        if all.len() > MAX_CLASSES || all.iter().any(|&c| c >= MAX_CLASSES) {
            return Err(Error::config(format!(
                "class ids must lie below {MAX_CLASSES}"
            )));
        }
        self.train_arrival.validate()?;
        self.inference_arrival.validate()?;
        Ok(())
    }

    /// Largest class id plus one.
    pub fn class_count(&self) -> usize {
        self.scenarios
            .iter()
            .flat_map(|s| s.classes.iter())
            .max()
            .map_or(0, |&c| c + 1)
    }

    /// Nine scenarios, ten classes: two classes to pre-train on, then one new
    /// class per scenario, every new scenario also nudging the existing
    /// clusters.
    pub fn benchmark(seed: u64) -> Self {
        let mut scenarios = vec![ScenarioSpec {
            kind: ScenarioKind::NewClass,
            classes: vec![0, 1],
            transform: Transform::default(),
            train_batches: 600,
            inference_share: None,
        }];
        for s in 1..9 {
            scenarios.push(ScenarioSpec {
                kind: ScenarioKind::NewClass,
                classes: (0..=s + 1).collect(),
                transform: Transform::default(),
                train_batches: 600,
                inference_share: None,
            });
        }
        WorkloadSpec {
            seed,
            dims: 64,
            batch_size: 16,
            separation: 5.0,
            noise_std: 1.0,
            test_per_scenario: 512,
            pretrain_scenarios: 1,
            scenarios,
            train_arrival: ArrivalProcess::Poisson { rate: 0.1 },
            inference_arrival: ArrivalProcess::Poisson { rate: 1.0 },
            total_inferences: 500,
            inference_batch: 16,
        }
    }
}

/// Reproducibility record for a generated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadExport {
    pub spec: WorkloadSpec,
    pub warnings: Vec<String>,
    pub scenarios: Vec<ScenarioExport>,
    pub events: EventStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioExport {
    pub id: usize,
    pub kind: ScenarioKind,
    pub transform: Transform,
    pub classes: Vec<usize>,
    pub class_means: std::collections::BTreeMap<usize, Vec<f64>>,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
}

pub fn export_workload(spec: &WorkloadSpec) -> Result<WorkloadExport> {
    let dataset = generate_dataset(spec)?;
    let events = generate_events(spec, &dataset)?;
    let scenarios = dataset
        .scenarios
        .iter()
        .zip(&spec.scenarios)
        .map(|(d, s)| ScenarioExport {
            id: d.id,
            kind: s.kind,
            transform: s.transform.clone(),
            classes: d.classes.clone(),
            class_means: d.class_means.clone(),
            train_samples: d.train.len(),
            validation_samples: d.val.len(),
            test_samples: d.test.len(),
        })
        .collect();
    Ok(WorkloadExport {
        spec: spec.clone(),
        warnings: dataset.warnings.clone(),
        scenarios,
        events: EventStats::of(&events),
    })
}
