use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// Fully connected layer computing `activation(x · W + b)`.
///
/// `weights` has shape `(in_dim, out_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub frozen: bool,
}

impl DenseLayer {
    pub fn new(weights: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weights.cols()
            )));
        }
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            frozen: false,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        let weights = Tensor2::from_vec(in_dim, out_dim, data)?;
        Self::new(weights, vec![0.0; out_dim], activation)
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Returns `(pre_activation, output)`.
    pub(crate) fn apply(&self, input: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let mut z = input.matmul(&self.weights)?;
        let cols = z.cols();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v += self.bias[i % cols];
        }
        let mut a = z.clone();
        if self.activation != Activation::Identity {
            a.data_mut()
                .iter_mut()
                .for_each(|v| *v = self.activation.apply(*v));
        }
        Ok((z, a))
    }
}
