use std::collections::BTreeSet;

use super::config::{Policy, RunConfig};
use super::report::{
    FreezeChange, RequestRecord, RoundInfo, RunReport, ThresholdCause, ThresholdPoint,
};
use crate::costmodel::{CostLedger, RoundUsage};
use crate::drift::{energy_score, DriftDetector, DriftMode};
use crate::lazytune::TunerState;
use crate::nn::{evaluate, CwrBank, Network, Tensor2};
use crate::rng::{stream_rng, streams};
use crate::simfreeze::FreezeController;
use crate::workload::{generate_dataset, generate_events, Dataset, Event, EventKind};
use crate::{Error, Result};

/// Generates the workload and runs the policy over it.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let dataset = generate_dataset(&config.workload)?;
    let events = generate_events(&config.workload, &dataset)?;
    run_on(config, &dataset, &events)
}

/// Runs the policy over an already generated workload.
pub fn run_on(config: &RunConfig, dataset: &Dataset, events: &[Event]) -> Result<RunReport> {
    config.validate()?;
    let mut sim = Sim::new(config, dataset)?;
    for ev in events {
        sim.advance_to(ev.time)?;
        match &ev.kind {
            EventKind::TrainBatch { scenario, batch } => {
                sim.on_train_batch(ev.time, *scenario, *batch)?
            }
            EventKind::InferenceRequest {
                scenario,
                request,
                samples,
            } => sim.on_inference(ev.time, *scenario, *request, samples)?,
            EventKind::ScenarioBoundary { .. } => sim.on_boundary(ev.time)?,
        }
    }
    sim.advance_to(f64::INFINITY)?;
    Ok(sim.finish())
}

struct PendingRound {
    iterations: u64,
    val_accuracy: f64,
    /// Tuner generation at round start; a reset in between voids the update.
    generation: u64,
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    model: Network,
    bank: CwrBank,
    /// Pre-round model, served while a round is in flight.
    serving: Option<(Network, CwrBank)>,
    busy_until: f64,
    pending: Option<PendingRound>,
    queue: Vec<(usize, usize)>,
    tuner: TunerState,
    generation: u64,
    freezer: Option<FreezeController>,
    probe_stale: bool,
    detector: DriftDetector,
    iteration: u64,
    pending_cka_flops: u64,
    ledger: CostLedger,
    rounds_completed: u64,
    requests: Vec<RequestRecord>,
    rounds: Vec<RoundInfo>,
    frozen_timeline: Vec<FreezeChange>,
    thresholds: Vec<ThresholdPoint>,
    detections: Vec<f64>,
    boundaries: Vec<f64>,
}

fn cwr_classes(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a RunConfig, data: &'a Dataset) -> Result<Self> {
        let mut rng = stream_rng(cfg.seed, streams::NET_INIT);
        let mut model = Network::new(&cfg.network_dims(), &mut rng)?;
        let mut bank = CwrBank::new();
        pretrain(cfg, data, &mut model, &mut bank)?;

        let freezer = if cfg.policy.uses_simfreeze() {
            Some(FreezeController::new(
                &model,
                cfg.freeze.freeze_interval,
                cfg.freeze.stability_threshold,
            )?)
        } else {
            None
        };
        let param_count: u64 = model
            .shapes()
            .iter()
            .map(|&(i, o)| ((i + 1) * o) as u64)
            .sum();
        let tuner = TunerState::new(cfg.lazytune.cap)?;
        let mut sim = Sim {
            cfg,
            data,
            frozen_timeline: vec![FreezeChange {
                time: 0.0,
                iteration: 0,
                frozen: model.freeze_mask(),
            }],
            model,
            bank,
            serving: None,
            busy_until: f64::NEG_INFINITY,
            pending: None,
            queue: Vec::new(),
            tuner,
            generation: 0,
            freezer,
            probe_stale: false,
            detector: DriftDetector::new(cfg.drift)?,
            iteration: 0,
            pending_cka_flops: 0,
            ledger: CostLedger::new(param_count),
            rounds_completed: 0,
            requests: Vec::new(),
            rounds: Vec::new(),
            thresholds: Vec::new(),
            detections: Vec::new(),
            boundaries: Vec::new(),
        };
        sim.note_threshold(0.0, ThresholdCause::Start);
        Ok(sim)
    }

    fn threshold(&self) -> f64 {
        match self.cfg.policy {
            Policy::Immediate | Policy::SimFreeze => 1.0,
            Policy::Static(k) => f64::from(k),
            Policy::LazyTune | Policy::ETuner => self.tuner.batches_needed(),
        }
    }

    fn note_threshold(&mut self, time: f64, cause: ThresholdCause) {
        let value = self.threshold();
        if self
            .thresholds
            .last()
            .is_some_and(|p| p.batches_needed == value)
        {
            return;
        }
        self.thresholds.push(ThresholdPoint {
            time,
            batches_needed: value,
            cause,
        });
    }

    fn note_freeze(&mut self, time: f64) {
        let frozen = self.model.freeze_mask();
        if self
            .frozen_timeline
            .last()
            .is_some_and(|c| c.frozen == frozen)
        {
            return;
        }
        self.frozen_timeline.push(FreezeChange {
            time,
            iteration: self.iteration,
            frozen,
        });
    }

    /// Completes every in-flight round that ends by `t`, re-checking the
    /// trigger at each completion time.
    fn advance_to(&mut self, t: f64) -> Result<()> {
        while self.serving.is_some() && self.busy_until <= t {
            let done_at = self.busy_until;
            self.serving = None;
            self.rounds_completed += 1;
            if let Some(p) = self.pending.take() {
                if self.cfg.policy.uses_lazytune() && p.generation == self.generation {
                    self.tuner.finish_round(
                        p.iterations,
                        p.val_accuracy,
                        u64::from(self.cfg.epochs_per_round),
                    )?;
                    self.note_threshold(done_at, ThresholdCause::Round);
                }
            }
            self.try_trigger(done_at)?;
        }
        Ok(())
    }

    fn try_trigger(&mut self, t: f64) -> Result<()> {
        if self.serving.is_some() || self.queue.is_empty() {
            return Ok(());
        }
        if self.queue.len() as f64 >= self.threshold().ceil() {
            self.start_round(t)?;
        }
        Ok(())
    }

    fn start_round(&mut self, t: f64) -> Result<()> {
        let batches = std::mem::take(&mut self.queue);
        self.tuner.batches_ava = 0;
        self.serving = Some((self.model.clone(), self.bank.clone()));

        let loaded: Vec<(Tensor2, Vec<usize>)> = batches
            .iter()
            .map(|&(s, b)| self.data.train_batch(s, b))
            .collect();
        let classes = cwr_classes(
            &loaded
                .iter()
                .flat_map(|(_, y)| y.iter().copied())
                .collect::<Vec<_>>(),
        );
        if self.cfg.cwr {
            self.bank.begin_round(&mut self.model, &classes);
        }

        let mut usage = RoundUsage {
            start_time: t,
            batches: batches.len() as u64,
            ..RoundUsage::default()
        };
        let mut loss_sum = 0.0;
        for _ in 0..self.cfg.epochs_per_round {
            for (x, y) in &loaded {
                let bp = self.model.backward(x, y)?;
                usage.flops += bp.flops.training_flops();
                usage.activation_mem_units = usage
                    .activation_mem_units
                    .max(bp.flops.activation_mem_units);
                loss_sum += bp.loss;
                self.model.sgd_step(&bp.grads, self.cfg.lr);
                self.iteration += 1;
                usage.iterations += 1;
                if let Some(fc) = self.freezer.as_mut() {
                    if self.iteration % fc.freeze_interval() == 0 {
                        let out = fc.maybe_freeze(&mut self.model, self.iteration)?;
                        usage.cka_flops += out.cka_flops;
                        if !out.changed.is_empty() {
                            self.note_freeze(t);
                        }
                    }
                }
            }
        }
        let mean_loss = loss_sum / usage.iterations as f64;
        if !self.model.is_finite() || !mean_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite state after round {} (t={t:.3}, iteration {}, mean loss {mean_loss}, lr {}, frozen {:?})",
                self.ledger.records.len(),
                self.iteration,
                self.cfg.lr,
                self.model.freeze_mask()
            )));
        }
        if self.cfg.cwr {
            self.bank.end_round(&self.model, &classes);
        }

        let scenario = batches.last().map_or(0, |b| b.0);
        let val = &self.data.scenarios[scenario].val;
        // only the curve fit consumes validation accuracy
        let val_accuracy = match self.cfg.policy.uses_lazytune() {
            true if !val.is_empty() => {
                Some(evaluate(&self.model, &self.bank, &val.data, &val.labels)?)
            }
            true => Some(0.0),
            false => None,
        };

        usage.cka_flops += std::mem::take(&mut self.pending_cka_flops);
        let rec = *self.ledger.charge_round(&self.cfg.cost, usage);
        self.busy_until = t + rec.time();
        self.rounds.push(RoundInfo {
            round: rec.round,
            start_time: t,
            end_time: self.busy_until,
            scenario,
            batches: usage.batches,
            iterations: usage.iterations,
            mean_loss,
            val_accuracy,
            frozen_layers: self.model.frozen_count(),
            flops: rec.flops,
            cka_flops: rec.cka_flops,
            time: rec.time(),
            energy: rec.energy(),
        });
        self.pending = Some(PendingRound {
            iterations: usage.iterations,
            val_accuracy: val_accuracy.unwrap_or(0.0),
            generation: self.generation,
        });
        Ok(())
    }

    fn on_train_batch(&mut self, t: f64, scenario: usize, batch: usize) -> Result<()> {
        if let Some(fc) = self.freezer.as_mut() {
            if fc.probe().is_none() {
                fc.set_probe(self.data.train_batch(scenario, batch).0)?;
            } else if self.probe_stale {
                let probe = self.data.train_batch(scenario, batch).0;
                let out = fc.on_scenario_change(&mut self.model, probe, self.iteration)?;
                self.pending_cka_flops += out.cka_flops;
                if !out.changed.is_empty() {
                    self.note_freeze(t);
                }
            }
        }
        self.probe_stale = false;
        self.queue.push((scenario, batch));
        self.tuner.batches_ava = self.queue.len() as u64;
        self.try_trigger(t)
    }

    fn on_inference(
        &mut self,
        t: f64,
        scenario: usize,
        request: usize,
        samples: &[usize],
    ) -> Result<()> {
        let pool = &self.data.scenarios[scenario].test;
        let (x, labels) = pool.select(samples);
        let (net, bank) = match &self.serving {
            Some((n, b)) => (n, b),
            None => (&self.model, &self.bank),
        };
        let (logits, classes) = bank.eval_logits(net, &x)?;
        let mut correct = 0usize;
        let mut fired = false;
        let mut energy_sum = 0.0;
        for (row, &y) in logits.data().chunks(logits.cols()).zip(&labels) {
            let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            if classes[best] == y {
                correct += 1;
            }
            let e = energy_score(row, self.cfg.drift.temperature)?;
            energy_sum += e;
            fired |= self.detector.observe(e);
        }
        let accuracy = if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        };
        self.requests.push(RequestRecord {
            request,
            time: t,
            scenario,
            accuracy,
            energy_score: if labels.is_empty() {
                0.0
            } else {
                energy_sum / labels.len() as f64
            },
            rounds_completed: self.rounds_completed,
            batches_needed: self.threshold(),
        });
        if self.cfg.policy.uses_lazytune() {
            self.tuner.on_inference();
            self.note_threshold(t, ThresholdCause::Inference);
        }
        if fired {
            self.on_change(t);
        }
        self.try_trigger(t)
    }

    fn on_boundary(&mut self, t: f64) -> Result<()> {
        self.boundaries.push(t);
        if self.detector.mode() == DriftMode::Oracle {
            self.on_change(t);
            self.try_trigger(t)?;
        }
        Ok(())
    }

    fn on_change(&mut self, t: f64) {
        self.detections.push(t);
        if self.cfg.policy.uses_lazytune() {
            self.tuner.on_scenario_change();
            self.generation += 1;
            self.note_threshold(t, ThresholdCause::Reset);
        }
        if self.freezer.as_ref().is_some_and(|f| f.probe().is_some()) {
            self.probe_stale = true;
        }
    }

    fn finish(mut self) -> RunReport {
        if self.pending_cka_flops > 0 {
            self.ledger
                .attach_cka_flops(&self.cfg.cost, self.pending_cka_flops);
        }
        let n = self.requests.len();
        let avg = if n == 0 {
            0.0
        } else {
            self.requests.iter().map(|r| r.accuracy).sum::<f64>() / n as f64
        };
        let totals = self.ledger.totals;
        RunReport {
            policy: self.cfg.policy,
            seed: self.cfg.seed,
            avg_inference_accuracy: avg,
            total_time: totals.time(),
            total_energy: totals.energy(),
            round_count: totals.rounds,
            total_flops: totals.flops,
            total_cka_flops: totals.cka_flops,
            requests: self.requests,
            rounds: self.rounds,
            frozen_timeline: self.frozen_timeline,
            batches_needed_timeline: self.thresholds,
            detections: self.detections,
            boundaries: self.boundaries,
            warnings: self.data.warnings.clone(),
            ledger: self.ledger,
            config: self.cfg.clone(),
        }
    }
}

/// Uncharged training on the pre-training scenarios.
fn pretrain(
    cfg: &RunConfig,
    data: &Dataset,
    model: &mut Network,
    bank: &mut CwrBank,
) -> Result<()> {
    for s in 0..cfg.workload.pretrain_scenarios {
        let batches: Vec<(Tensor2, Vec<usize>)> = (0..data.train_batch_count(s))
            .map(|b| data.train_batch(s, b))
            .collect();
        let classes = cwr_classes(&data.scenarios[s].train.labels);
        if cfg.cwr {
            bank.begin_round(model, &classes);
        }
        for _ in 0..cfg.pretrain_epochs {
            for (x, y) in &batches {
                let bp = model.backward(x, y)?;
                model.sgd_step(&bp.grads, cfg.lr);
            }
        }
        if !model.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite weights after pre-training scenario {s}"
            )));
        }
        if cfg.cwr {
            bank.end_round(model, &classes);
        }
    }
    Ok(())
}
