//! Analytic time/energy ledger for fine-tuning rounds.
//!
//! Every round pays a fixed overhead quantum (system initialisation, model
//! load, model save) plus compute proportional to its FLOPs. The default
//! parameters are calibrated so that an immediate-tuning run of the
//! reference network spends 58% of its time and 38% of its energy on the
//! overhead quantum.

use serde::{Deserialize, Serialize};

use crate::nn::training_cost;
use crate::{Error, Result};

/// Reference network used by [`calibrate_defaults`].
pub const REFERENCE_DIMS: [usize; 4] = [64, 128, 128, 10];
pub const REFERENCE_BATCH: usize = 16;
pub const OVERHEAD_TIME_SHARE: f64 = 0.58;
pub const OVERHEAD_ENERGY_SHARE: f64 = 0.38;

/// Missing keys in a config take the calibrated defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub t_init: f64,
    pub t_load: f64,
    pub t_save: f64,
    pub e_init: f64,
    pub e_load: f64,
    pub e_save: f64,
    pub t_per_gflop: f64,
    pub e_per_gflop: f64,
    pub cka_overhead_charged: bool,
    /// Extra load+save seconds per million parameters.
    pub t_io_per_mparam: f64,
    /// Extra load+save joules per million parameters.
    pub e_io_per_mparam: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        calibrate_defaults()
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_init,
            self.t_load,
            self.t_save,
            self.e_init,
            self.e_load,
            self.e_save,
            self.t_per_gflop,
            self.e_per_gflop,
            self.t_io_per_mparam,
            self.e_io_per_mparam,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(
                "cost parameters must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn overhead_time(&self, model_params: u64) -> f64 {
        self.t_init + self.t_load + self.t_save + self.t_io_per_mparam * model_params as f64 / 1e6
    }

    pub fn overhead_energy(&self, model_params: u64) -> f64 {
        self.e_init + self.e_load + self.e_save + self.e_io_per_mparam * model_params as f64 / 1e6
    }

    pub fn compute_time(&self, flops: u64) -> f64 {
        self.t_per_gflop * flops as f64 / 1e9
    }

    pub fn compute_energy(&self, flops: u64) -> f64 {
        self.e_per_gflop * flops as f64 / 1e9
    }

    /// Modelled wall time of a round with the given FLOPs.
    pub fn round_time(&self, flops: u64, cka_flops: u64, model_params: u64) -> f64 {
        let charged = if self.cka_overhead_charged {
            cka_flops
        } else {
            0
        };
        self.overhead_time(model_params) + self.compute_time(flops + charged)
    }
}

/// Per-round compute FLOPs of immediate tuning on the reference network.
pub fn reference_round_flops() -> u64 {
    let shapes: Vec<(usize, usize)> = REFERENCE_DIMS.windows(2).map(|w| (w[0], w[1])).collect();
    training_cost(&shapes, &vec![false; shapes.len()], REFERENCE_BATCH).training_flops()
}

/// Solves for the per-GFLOP rates that give the requested overhead shares
/// when every round computes `round_flops`:
///
/// `share = overhead / (overhead + rate · round_flops)`
/// ⇒ `rate = overhead · (1 − share) / (share · round_flops)`.
pub fn calibrate(
    time_share: f64,
    energy_share: f64,
    overhead_time: [f64; 3],
    overhead_energy: [f64; 3],
    round_flops: u64,
) -> CostParams {
    let gflops = round_flops as f64 / 1e9;
    let ot: f64 = overhead_time.iter().sum();
    let oe: f64 = overhead_energy.iter().sum();
    CostParams {
        t_init: overhead_time[0],
        t_load: overhead_time[1],
        t_save: overhead_time[2],
        e_init: overhead_energy[0],
        e_load: overhead_energy[1],
        e_save: overhead_energy[2],
        t_per_gflop: ot * (1.0 - time_share) / (time_share * gflops),
        e_per_gflop: oe * (1.0 - energy_share) / (energy_share * gflops),
        cka_overhead_charged: true,
        t_io_per_mparam: 0.0,
        e_io_per_mparam: 0.0,
    }
}

/// 1.5 s / 15 J overhead per round, split init:load:save = 4:1:1.
pub fn calibrate_defaults() -> CostParams {
    calibrate(
        OVERHEAD_TIME_SHARE,
        OVERHEAD_ENERGY_SHARE,
        [1.0, 0.25, 0.25],
        [10.0, 2.5, 2.5],
        reference_round_flops(),
    )
}

/// Resources consumed by one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundUsage {
    pub flops: u64,
    pub cka_flops: u64,
    pub batches: u64,
    pub iterations: u64,
    pub activation_mem_units: u64,
    pub start_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub start_time: f64,
    pub batches: u64,
    pub iterations: u64,
    pub overhead_time: f64,
    pub compute_time: f64,
    pub overhead_energy: f64,
    pub compute_energy: f64,
    pub flops: u64,
    pub cka_flops: u64,
    /// Part of `compute_time` / `compute_energy` spent on CKA probing.
    pub cka_time: f64,
    pub cka_energy: f64,
    pub activation_mem_units: u64,
}

impl RoundRecord {
    pub fn time(&self) -> f64 {
        self.overhead_time + self.compute_time
    }

    pub fn energy(&self) -> f64 {
        self.overhead_energy + self.compute_energy
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub rounds: u64,
    pub overhead_time: f64,
    pub compute_time: f64,
    pub overhead_energy: f64,
    pub compute_energy: f64,
    pub flops: u64,
    pub cka_flops: u64,
    pub cka_energy: f64,
}

impl LedgerTotals {
    pub fn time(&self) -> f64 {
        self.overhead_time + self.compute_time
    }

    pub fn energy(&self) -> f64 {
        self.overhead_energy + self.compute_energy
    }

    /// Overhead share of `(time, energy)`; zero for an empty ledger.
    pub fn overhead_shares(&self) -> (f64, f64) {
        let share = |o: f64, total: f64| if total > 0.0 { o / total } else { 0.0 };
        (
            share(self.overhead_time, self.time()),
            share(self.overhead_energy, self.energy()),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub model_params: u64,
    pub records: Vec<RoundRecord>,
    pub totals: LedgerTotals,
    pub peak_activation_mem_units: u64,
}

impl CostLedger {
    pub fn new(model_params: u64) -> Self {
        Self {
            model_params,
            ..Self::default()
        }
    }

    pub fn charge_round(&mut self, params: &CostParams, usage: RoundUsage) -> &RoundRecord {
        let charged_cka = if params.cka_overhead_charged {
            usage.cka_flops
        } else {
            0
        };
        let cka_time = params.compute_time(charged_cka);
        let cka_energy = params.compute_energy(charged_cka);
        let rec = RoundRecord {
            round: self.records.len() as u64,
            start_time: usage.start_time,
            batches: usage.batches,
            iterations: usage.iterations,
            overhead_time: params.overhead_time(self.model_params),
            compute_time: params.compute_time(usage.flops) + cka_time,
            overhead_energy: params.overhead_energy(self.model_params),
            compute_energy: params.compute_energy(usage.flops) + cka_energy,
            flops: usage.flops,
            cka_flops: usage.cka_flops,
            cka_time,
            cka_energy,
            activation_mem_units: usage.activation_mem_units,
        };
        let t = &mut self.totals;
        t.rounds += 1;
        t.overhead_time += rec.overhead_time;
        t.compute_time += rec.compute_time;
        t.overhead_energy += rec.overhead_energy;
        t.compute_energy += rec.compute_energy;
        t.flops += rec.flops;
        t.cka_flops += rec.cka_flops;
        t.cka_energy += rec.cka_energy;
        self.peak_activation_mem_units =
            self.peak_activation_mem_units.max(rec.activation_mem_units);
        self.records.push(rec);
        self.records.last().expect("just pushed")
    }

    /// Adds CKA FLOPs spent outside a round to the most recent round.
    /// Returns `false` when there is no round yet.
    pub fn attach_cka_flops(&mut self, params: &CostParams, cka_flops: u64) -> bool {
        let Some(rec) = self.records.last_mut() else {
            return false;
        };
        let charged = if params.cka_overhead_charged {
            cka_flops
        } else {
            0
        };
        let (dt, de) = (params.compute_time(charged), params.compute_energy(charged));
        rec.cka_flops += cka_flops;
        rec.cka_time += dt;
        rec.cka_energy += de;
        rec.compute_time += dt;
        rec.compute_energy += de;
        // re-sum so totals stay bit-identical to a fresh sum over the records
        self.totals = self.recomputed_totals();
        true
    }

    /// Recomputes totals from the records.
    pub fn recomputed_totals(&self) -> LedgerTotals {
        let mut t = LedgerTotals::default();
        for r in &self.records {
            t.rounds += 1;
            t.overhead_time += r.overhead_time;
            t.compute_time += r.compute_time;
            t.overhead_energy += r.overhead_energy;
            t.compute_energy += r.compute_energy;
            t.flops += r.flops;
            t.cka_flops += r.cka_flops;
            t.cka_energy += r.cka_energy;
        }
        t
    }
}
