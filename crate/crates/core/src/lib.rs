//! Discrete-event simulator for on-device continual learning.
//!
//! A stream of training batches and inference requests is replayed against a
//! small dense network. Tuning policies decide when to run fine-tuning
//! rounds and which layers to train; an analytic ledger prices each round.

pub mod cka;
pub mod costmodel;
pub mod drift;
mod error;
pub mod harness;
pub mod lazytune;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod simfreeze;
pub mod workload;

pub use error::{Error, Result};
