//! Similarity-guided layer freezing.
//!
//! Every `freeze_interval` training iterations each active feature layer is
//! compared, on a fixed probe batch, against the same layer of the snapshot
//! taken when continual learning started. A layer whose CKA moved by at most
//! `stability_threshold` (relative) since its previous measurement is frozen.
//! When the deployment scenario changes, frozen layers are re-measured on a
//! probe from the new scenario and thawed if their CKA shifted by at least
//! the same threshold.
//!
//! The classifier head is never frozen.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cka::{cka, relative_change, CkaTrack};
use crate::nn::{Network, Tensor2};
use crate::{Error, Result};

pub const DEFAULT_FREEZE_INTERVAL: u64 = 200;
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 0.01;

/// What a controller callback did, including the FLOPs it spent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeOutcome {
    /// Layers whose freeze flag changed.
    pub changed: Vec<usize>,
    pub cka_flops: u64,
    pub cka_evaluations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreezeController {
    reference: Network,
    freeze_interval: u64,
    stability_threshold: f64,
    tracks: Vec<CkaTrack>,
    probe: Option<Tensor2>,
    prev_scenario_cka: BTreeMap<usize, f64>,
}

fn gram_flops(samples: usize, features: usize) -> u64 {
    // two centered Gram matrices plus their Frobenius inner product
    let n = samples as u64;
    2 * (2 * n * n * features as u64) + 2 * n * n
}

impl FreezeController {
    /// `reference` is snapshotted here and never replaced.
    pub fn new(
        reference: &Network,
        freeze_interval: u64,
        stability_threshold: f64,
    ) -> Result<Self> {
        if freeze_interval == 0 {
            return Err(Error::config("freeze_interval must be at least 1"));
        }
        if !(stability_threshold > 0.0 && stability_threshold < 1.0) {
            return Err(Error::config("stability_threshold must lie in (0, 1)"));
        }
        let mut reference = reference.clone();
        reference.set_freeze_mask(&vec![false; reference.depth()]);
        let tracks = (0..reference.feature_depth()).map(CkaTrack::new).collect();
        Ok(Self {
            reference,
            freeze_interval,
            stability_threshold,
            tracks,
            probe: None,
            prev_scenario_cka: BTreeMap::new(),
        })
    }

    pub fn freeze_interval(&self) -> u64 {
        self.freeze_interval
    }

    pub fn stability_threshold(&self) -> f64 {
        self.stability_threshold
    }

    pub fn track(&self, layer: usize) -> &CkaTrack {
        &self.tracks[layer]
    }

    pub fn probe(&self) -> Option<&Tensor2> {
        self.probe.as_ref()
    }

    pub fn prev_scenario_cka(&self, layer: usize) -> Option<f64> {
        self.prev_scenario_cka.get(&layer).copied()
    }

    /// Sets the probe batch without touching freeze state. Used for the first
    /// scenario of a run.
    pub fn set_probe(&mut self, probe: Tensor2) -> Result<()> {
        if probe.rows() < 2 {
            return Err(Error::input("probe batch needs at least two samples"));
        }
        self.probe = Some(probe);
        Ok(())
    }

    #[doc(hidden)]
    pub fn track_mut(&mut self, layer: usize) -> &mut CkaTrack {
        &mut self.tracks[layer]
    }

    #[doc(hidden)]
    pub fn set_prev_scenario_cka(&mut self, layer: usize, value: f64) {
        self.prev_scenario_cka.insert(layer, value);
    }

    /// CKA of each requested feature layer between `net` and the reference on
    /// the current probe. Layers whose output is constant on the probe are
    /// reported as `None`.
    fn measure(&self, net: &Network, layers: &[usize]) -> Result<(Vec<Option<f64>>, u64)> {
        let probe = self
            .probe
            .as_ref()
            .ok_or_else(|| Error::State("no probe batch yet".into()))?;
        let Some(&deepest) = layers.iter().max() else {
            return Ok((Vec::new(), 0));
        };
        let current = net.forward(probe, true)?;
        let reference = self.reference.forward(probe, true)?;
        let (cur, refr) = (
            current.feats.unwrap_or_default(),
            reference.feats.unwrap_or_default(),
        );

        let b = probe.rows() as u64;
        let mut flops: u64 = self
            .reference
            .shapes()
            .iter()
            .take(deepest + 1)
            .map(|&(i, o)| 2 * 2 * b * (i * o) as u64)
            .sum();
        let mut out = Vec::with_capacity(layers.len());
        for &l in layers {
            flops += gram_flops(probe.rows(), cur[l].cols());
            out.push(match cka(&cur[l], &refr[l]) {
                Ok(v) => Some(v),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            });
        }
        Ok((out, flops))
    }

    /// Periodic freezing check. Must be called with `iteration` a multiple of
    /// the freeze interval.
    pub fn maybe_freeze(&mut self, net: &mut Network, iteration: u64) -> Result<FreezeOutcome> {
        if iteration == 0 || iteration % self.freeze_interval != 0 {
            return Err(Error::State(format!(
                "iteration {iteration} is not a positive multiple of {}",
                self.freeze_interval
            )));
        }
        let active: Vec<usize> = (0..net.feature_depth())
            .filter(|&l| !net.layer(l).frozen)
            .collect();
        if active.is_empty() {
            return Ok(FreezeOutcome::default());
        }
        let (values, cka_flops) = self.measure(net, &active)?;
        let mut changed = Vec::new();
        for (&l, v) in active.iter().zip(values) {
            let Some(v) = v else { continue };
            self.prev_scenario_cka.insert(l, v);
            let rate = self.tracks[l].variation_rate(v.min(1.0), iteration)?;
            if rate <= self.stability_threshold {
                net.layer_mut(l).frozen = true;
                changed.push(l);
            }
        }
        Ok(FreezeOutcome {
            changed,
            cka_flops,
            cka_evaluations: active.len(),
        })
    }

    /// Replaces the probe with the first batch of the new scenario and thaws
    /// frozen layers whose CKA shifted by at least the stability threshold
    /// since the previous scenario. A thawed layer's track restarts, so it
    /// needs two fresh measurements before it can freeze again.
    ///
    /// Only frozen layers are measured; with none frozen this costs nothing.
    pub fn on_scenario_change(
        &mut self,
        net: &mut Network,
        new_probe: Tensor2,
        _iteration: u64,
    ) -> Result<FreezeOutcome> {
        if new_probe.rows() == 0 {
            return Err(Error::input("empty probe batch"));
        }
        self.set_probe(new_probe)?;
        let frozen: Vec<usize> = (0..net.feature_depth())
            .filter(|&l| net.layer(l).frozen)
            .collect();
        if frozen.is_empty() {
            return Ok(FreezeOutcome::default());
        }
        let (values, cka_flops) = self.measure(net, &frozen)?;
        let mut changed = Vec::new();
        for (&l, v) in frozen.iter().zip(values) {
            let unstable = match (self.prev_scenario_cka.get(&l), v) {
                (Some(&prev), Some(now)) => relative_change(prev, now) >= self.stability_threshold,
                _ => true,
            };
            if unstable {
                net.layer_mut(l).frozen = false;
                self.tracks[l].reset();
                changed.push(l);
            }
            if let Some(v) = v {
                self.prev_scenario_cka.insert(l, v);
            }
        }
        Ok(FreezeOutcome {
            changed,
            cka_flops,
            cka_evaluations: frozen.len(),
        })
    }
}
