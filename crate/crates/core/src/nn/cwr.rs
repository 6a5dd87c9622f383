//! CopyWeights with Re-init on the classifier head.
//!
//! Each round starts with the head columns of the round's classes reset to
//! their consolidated values (zeros for classes never seen). When the round
//! ends, the trained columns replace the consolidated ones. Columns of
//! classes absent from a round keep their consolidated values, so training
//! on a subset of classes cannot overwrite what was learnt for the others.
//!
//! The bank stores the latest trained row rather than a running mean over
//! rounds: with rounds as small as one batch, averaging shrinks every head
//! update by the number of rounds seen so far.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::network::argmax;
use super::{Network, Tensor2};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRow {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CwrBank {
    consolidated: BTreeMap<usize, HeadRow>,
    seen_counts: BTreeMap<usize, u64>,
    last_round: BTreeSet<usize>,
}

fn read_row(net: &Network, class: usize) -> HeadRow {
    let head = net.head();
    HeadRow {
        weights: (0..head.in_dim())
            .map(|r| head.weights.get(r, class))
            .collect(),
        bias: head.bias[class],
    }
}

fn write_row(net: &mut Network, class: usize, row: &HeadRow) {
    let head = net.head_mut();
    for (r, &w) in row.weights.iter().enumerate() {
        head.weights.set(r, class, w);
    }
    head.bias[class] = row.bias;
}

impl CwrBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.consolidated.is_empty()
    }

    pub fn seen_count(&self, class: usize) -> u64 {
        self.seen_counts.get(&class).copied().unwrap_or(0)
    }

    pub fn row(&self, class: usize) -> Option<&HeadRow> {
        self.consolidated.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.consolidated.keys().copied()
    }

    /// Re-initialises the head columns of `classes` before training.
    pub fn begin_round(&self, net: &mut Network, classes: &[usize]) {
        let width = net.head().in_dim();
        for &c in classes {
            let row = self
                .consolidated
                .get(&c)
                .cloned()
                .unwrap_or_else(|| HeadRow {
                    weights: vec![0.0; width],
                    bias: 0.0,
                });
            write_row(net, c, &row);
        }
    }

    /// Merges the trained head columns of `classes` into the bank.
    pub fn end_round(&mut self, net: &Network, classes: &[usize]) {
        self.last_round.clear();
        for &c in classes {
            let trained = read_row(net, c);
            *self.seen_counts.entry(c).or_insert(0) += 1;
            self.consolidated.insert(c, trained);
            self.last_round.insert(c);
        }
    }

    /// Logits under the consolidated head, restricted to classes the bank
    /// knows about. Columns of the returned matrix follow the returned class
    /// list. With an empty bank the live head is used unchanged.
    ///
    /// Classes trained in the most recent round keep their live rows; every
    /// other known class is restored from the bank.
    pub fn eval_logits(&self, net: &Network, data: &Tensor2) -> Result<(Tensor2, Vec<usize>)> {
        if self.is_empty() {
            let logits = net.forward(data, false)?.logits;
            return Ok((logits, (0..net.class_count()).collect()));
        }
        let mut eval = net.clone();
        for (&c, row) in &self.consolidated {
            if !self.last_round.contains(&c) {
                write_row(&mut eval, c, row);
            }
        }
        let full = eval.forward(data, false)?.logits;
        let classes: Vec<usize> = self.consolidated.keys().copied().collect();
        let picked = full
            .data()
            .chunks(full.cols())
            .flat_map(|row| classes.iter().map(|&c| row[c]));
        let logits = Tensor2::from_vec(full.rows(), classes.len(), picked.collect())?;
        Ok((logits, classes))
    }

    pub fn predict(&self, net: &Network, data: &Tensor2) -> Result<Vec<usize>> {
        let (logits, classes) = self.eval_logits(net, data)?;
        Ok((0..logits.rows())
            .map(|r| classes[argmax(logits.row(r))])
            .collect())
    }
}

/// Fraction of samples whose predicted class (under the consolidated head)
/// matches the label.
pub fn evaluate(net: &Network, bank: &CwrBank, data: &Tensor2, labels: &[usize]) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::input("cannot evaluate on an empty set"));
    }
    if labels.len() != data.rows() {
        return Err(Error::input(format!(
            "{} labels for {} samples",
            labels.len(),
            data.rows()
        )));
    }
    let pred = bank.predict(net, data)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}
