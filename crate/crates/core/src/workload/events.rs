use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::arrival::{read_trace, ArrivalProcess, TraceKind};
use super::{Dataset, WorkloadSpec};
use crate::rng::{stream_rng, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// Batch `batch` of the scenario's training pool.
    TrainBatch {
        scenario: usize,
        batch: usize,
    },
    /// Rows `samples` of the scenario's test pool.
    InferenceRequest {
        scenario: usize,
        request: usize,
        samples: Vec<usize>,
    },
    ScenarioBoundary {
        scenario: usize,
    },
}

impl EventKind {
    /// Tie-break rank at equal timestamps.
    fn rank(&self) -> u8 {
        match self {
            EventKind::TrainBatch { .. } => 0,
            EventKind::InferenceRequest { .. } => 1,
            EventKind::ScenarioBoundary { .. } => 2,
        }
    }

    pub fn scenario(&self) -> usize {
        match *self {
            EventKind::TrainBatch { scenario, .. }
            | EventKind::InferenceRequest { scenario, .. }
            | EventKind::ScenarioBoundary { scenario } => scenario,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub train_batches: usize,
    pub inference_requests: usize,
    pub boundaries: usize,
    pub span_seconds: f64,
    pub requests_per_scenario: Vec<usize>,
}

impl EventStats {
    pub fn of(events: &[Event]) -> Self {
        let mut s = EventStats::default();
        for e in events {
            match &e.kind {
                EventKind::TrainBatch { .. } => s.train_batches += 1,
                EventKind::InferenceRequest { scenario, .. } => {
                    s.inference_requests += 1;
                    if s.requests_per_scenario.len() <= *scenario {
                        s.requests_per_scenario.resize(scenario + 1, 0);
                    }
                    s.requests_per_scenario[*scenario] += 1;
                }
                EventKind::ScenarioBoundary { .. } => s.boundaries += 1,
            }
        }
        s.span_seconds = events.last().map_or(0.0, |e| e.time);
        s
    }
}

/// Spreads `n` arrivals of `proc` over `[t0, t1)`, keeping the process's
/// relative gaps.
fn place(
    proc: &ArrivalProcess,
    n: usize,
    t0: f64,
    t1: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let gaps = proc.sample_gaps(n + 1, rng);
    let total: f64 = gaps.iter().sum();
    let scale = (t1 - t0) / total;
    let mut t = 0.0;
    gaps[..n]
        .iter()
        .map(|g| {
            t += g;
            t0 + t * scale
        })
        .collect()
}

/// Largest-remainder split of `total` by `weights`.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

/// Lays the streamed scenarios of `dataset` out in time.
///
/// Training batches follow `spec.train_arrival`. Inference requests follow
/// `spec.inference_arrival`, rescaled to span the training stream (or each
/// scenario's stretch of it, when shares are given); trace processes are
/// used verbatim. A boundary event sits halfway between the last batch of a
/// scenario and the first batch of the next.
pub fn generate_events(spec: &WorkloadSpec, dataset: &Dataset) -> Result<Vec<Event>> {
    let streamed: Vec<usize> = (spec.pretrain_scenarios..dataset.scenarios.len()).collect();
    let slots: Vec<(usize, usize)> = streamed
        .iter()
        .flat_map(|&s| (0..dataset.train_batch_count(s)).map(move |b| (s, b)))
        .collect();

    let train_times: Vec<f64> = match &spec.train_arrival {
        ArrivalProcess::Trace { path } => read_trace(path, TraceKind::Train)?,
        proc => {
            let mut rng = stream_rng(spec.seed, streams::TRAIN_ARRIVALS);
            let mut t = 0.0;
            proc.sample_gaps(slots.len(), &mut rng)
                .into_iter()
                .map(|g| {
                    t += g;
                    t
                })
                .collect()
        }
    };
    if train_times.is_empty() {
        return Err(Error::config("workload produced no training batches"));
    }

    let mut events = Vec::new();
    let mut seq = 0u64;
    let mut push = |events: &mut Vec<Event>, time: f64, kind: EventKind| {
        events.push(Event { time, seq, kind });
        seq += 1;
    };

    // boundaries[i] = (start time, scenario) of each streamed scenario that got batches
    let mut boundaries: Vec<(f64, usize)> = Vec::new();
    let mut prev_time = 0.0;
    for (&(s, b), &t) in slots.iter().zip(&train_times) {
        if boundaries.last().is_none_or(|&(_, last)| last != s) {
            let at = 0.5 * (prev_time + t);
            boundaries.push((at, s));
            push(&mut events, at, EventKind::ScenarioBoundary { scenario: s });
        }
        push(
            &mut events,
            t,
            EventKind::TrainBatch {
                scenario: s,
                batch: b,
            },
        );
        prev_time = t;
    }
    let end = prev_time;

    let scenario_at = |t: f64| -> usize {
        boundaries
            .iter()
            .rev()
            .find(|&&(bt, _)| bt <= t)
            .map_or(boundaries[0].1, |&(_, s)| s)
    };

    let mut rng = stream_rng(spec.seed, streams::INFER_ARRIVALS);
    let infer_times: Vec<f64> = match &spec.inference_arrival {
        ArrivalProcess::Trace { path } => read_trace(path, TraceKind::Infer)?,
        proc => {
            let streamed_specs = &spec.scenarios[spec.pretrain_scenarios..];
            if streamed_specs.iter().any(|s| s.inference_share.is_some()) {
                let weights: Vec<f64> = boundaries
                    .iter()
                    .map(|&(_, s)| spec.scenarios[s].inference_share.unwrap_or(0.0))
                    .collect();
                let counts = apportion(spec.total_inferences, &weights);
                let mut times = Vec::with_capacity(spec.total_inferences);
                for (i, &n) in counts.iter().enumerate() {
                    let t0 = boundaries[i].0;
                    let t1 = boundaries.get(i + 1).map_or(end, |b| b.0);
                    times.extend(place(proc, n, t0, t1, &mut rng));
                }
                times
            } else {
                place(proc, spec.total_inferences, 0.0, end, &mut rng)
            }
        }
    };

    let mut sample_rng = stream_rng(spec.seed, streams::INFER_SAMPLES);
    for (request, &t) in infer_times.iter().enumerate() {
        let scenario = scenario_at(t);
        let pool = dataset.scenarios[scenario].test.len();
        let samples = sample(&mut sample_rng, pool, spec.inference_batch.min(pool)).into_vec();
        push(
            &mut events,
            t,
            EventKind::InferenceRequest {
                scenario,
                request,
                samples,
            },
        );
    }

    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.kind.rank().cmp(&b.kind.rank()))
            .then(a.seq.cmp(&b.seq))
    });
    Ok(events)
}
