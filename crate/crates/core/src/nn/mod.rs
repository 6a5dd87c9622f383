//! Dense classification network with exact backpropagation, per-layer
//! freezing, FLOP accounting, and head-only CWR.

mod cwr;
mod flops;
mod layer;
mod network;
mod tensor;

pub use cwr::{evaluate, CwrBank, HeadRow};
pub use flops::{frozen_prefix, training_cost, FlopReport};
pub use layer::{Activation, DenseLayer};
pub use network::{BackwardPass, ForwardPass, Gradients, LayerGrad, Network};
pub use tensor::Tensor2;
