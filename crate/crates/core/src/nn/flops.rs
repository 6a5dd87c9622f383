use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// FLOP and activation-memory counts for one forward or training pass.
///
/// One multiply-accumulate counts as two FLOPs; bias and activation work is
/// not counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub fwd_flops: u64,
    pub bwd_act_flops: u64,
    pub bwd_wgt_flops: u64,
    /// Activation values retained for the backward pass.
    pub activation_mem_units: u64,
}

impl FlopReport {
    pub fn training_flops(&self) -> u64 {
        self.fwd_flops + self.bwd_act_flops + self.bwd_wgt_flops
    }
}

impl Add for FlopReport {
    type Output = FlopReport;

    fn add(mut self, rhs: FlopReport) -> FlopReport {
        self += rhs;
        self
    }
}

impl AddAssign for FlopReport {
    fn add_assign(&mut self, rhs: FlopReport) {
        self.fwd_flops += rhs.fwd_flops;
        self.bwd_act_flops += rhs.bwd_act_flops;
        self.bwd_wgt_flops += rhs.bwd_wgt_flops;
        self.activation_mem_units = self.activation_mem_units.max(rhs.activation_mem_units);
    }
}

#[inline]
pub(crate) fn matmul_flops(batch: usize, in_dim: usize, out_dim: usize) -> u64 {
    2 * (batch as u64) * (in_dim as u64) * (out_dim as u64)
}

/// Deepest index `p` such that layers `0..=p` are all frozen.
pub fn frozen_prefix(frozen: &[bool]) -> Option<usize> {
    frozen.iter().take_while(|&&f| f).count().checked_sub(1)
}

/// Per-iteration training cost of a dense stack, without running it.
///
/// `shapes[i]` is `(in_dim, out_dim)` of layer `i`; the last entry is the
/// classifier head. Frozen layers skip their weight gradient, and nothing
/// below the frozen prefix receives an activation gradient.
pub fn training_cost(shapes: &[(usize, usize)], frozen: &[bool], batch: usize) -> FlopReport {
    assert_eq!(shapes.len(), frozen.len(), "one freeze flag per layer");
    let first_live = frozen_prefix(frozen).map_or(0, |p| p + 1);
    let mut report = FlopReport::default();
    for (i, &(inp, out)) in shapes.iter().enumerate() {
        let f = matmul_flops(batch, inp, out);
        report.fwd_flops += f;
        if !frozen[i] {
            report.bwd_wgt_flops += f;
        }
        if i > first_live {
            report.bwd_act_flops += f;
        }
        if i >= first_live {
            report.activation_mem_units += (batch * inp) as u64;
        }
    }
    report
}
