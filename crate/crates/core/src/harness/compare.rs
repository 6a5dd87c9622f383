use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::{Policy, RunConfig};
use super::report::RunReport;
use super::run::run_on;
use crate::workload::{generate_dataset, generate_events};
use crate::{Error, Result};

/// Caps the number of runs `compare` executes concurrently.
pub const JOBS_ENV: &str = "EDGETUNE_JOBS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: Policy,
    pub avg_inference_accuracy: f64,
    pub total_time: f64,
    pub total_energy: f64,
    pub round_count: u64,
    pub total_flops: u64,
    pub requests: usize,
}

impl ComparisonRow {
    pub fn of(r: &RunReport) -> Self {
        Self {
            policy: r.policy,
            avg_inference_accuracy: r.avg_inference_accuracy,
            total_time: r.total_time,
            total_energy: r.total_energy,
            round_count: r.round_count,
            total_flops: r.total_flops,
            requests: r.requests.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    #[serde(skip)]
    pub reports: Vec<RunReport>,
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn row(&self, policy: Policy) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Worker count from the environment, defaulting to available parallelism.
pub fn worker_limit() -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(JOBS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(available)
}

/// `base` once per policy.
pub fn compare(base: &RunConfig, policies: &[Policy]) -> Result<Comparison> {
    let configs: Vec<RunConfig> = policies
        .iter()
        .map(|&p| RunConfig {
            policy: p,
            ..base.clone()
        })
        .collect();
    compare_configs(&configs)
}

/// Runs every config over one shared event stream. All configs must
/// describe the same workload.
pub fn compare_configs(configs: &[RunConfig]) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::config("nothing to compare"))?;
    for c in configs {
        c.validate()?;
        if c.workload.seed != first.workload.seed {
            return Err(Error::config(format!(
                "workload seeds differ ({} vs {})",
                c.workload.seed, first.workload.seed
            )));
        }
        if c.workload != first.workload {
            return Err(Error::config("compared configs must share one workload"));
        }
    }
    let dataset = generate_dataset(&first.workload)?;
    let events = generate_events(&first.workload, &dataset)?;

    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<RunReport>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    let workers = worker_limit().min(configs.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter poisoned");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= configs.len() {
                    break;
                }
                let r = run_on(&configs[i], &dataset, &events);
                results.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    let reports = results
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        rows: reports.iter().map(ComparisonRow::of).collect(),
        reports,
    })
}
