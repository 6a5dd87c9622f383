use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flops::{frozen_prefix, matmul_flops};
use super::{Activation, DenseLayer, FlopReport, Tensor2};
use crate::{Error, Result};

/// Feed-forward classifier: ReLU feature layers followed by a linear head.
///
/// Layer indices run over the feature layers first and end with the head,
/// so `layer(depth() - 1)` is the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    head: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Tensor2,
    /// Post-activation output of every layer, head included, when captured.
    pub feats: Option<Vec<Tensor2>>,
    pub flops: FlopReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

/// Per-layer gradients; `None` for layers that received no weight gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGrad>>,
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub grads: Gradients,
    pub loss: f64,
    pub flops: FlopReport,
}

impl Network {
    /// Builds a network with Glorot-uniform weights. `dims` lists the input
    /// width, every hidden width, and the class count.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::shape(
                "a network needs an input width and a class count",
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 2);
        for w in dims[..dims.len() - 1].windows(2) {
            layers.push(DenseLayer::glorot(w[0], w[1], Activation::Relu, rng)?);
        }
        let n = dims.len();
        let head = DenseLayer::glorot(dims[n - 2], dims[n - 1], Activation::Identity, rng)?;
        Self::from_parts(layers, head)
    }

    pub fn from_parts(layers: Vec<DenseLayer>, head: DenseLayer) -> Result<Self> {
        let mut width = layers.first().map_or(head.in_dim(), DenseLayer::in_dim);
        for l in layers.iter().chain(std::iter::once(&head)) {
            if l.in_dim() != width {
                return Err(Error::shape(format!(
                    "layer expects {} inputs but previous layer yields {width}",
                    l.in_dim()
                )));
            }
            width = l.out_dim();
        }
        Ok(Self { layers, head })
    }

    /// Number of layers including the head.
    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    /// Number of feature layers (everything but the head).
    #[inline]
    pub fn feature_depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &DenseLayer {
        if i < self.layers.len() {
            &self.layers[i]
        } else {
            assert_eq!(i, self.layers.len(), "layer index out of range");
            &self.head
        }
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer {
        if i < self.layers.len() {
            &mut self.layers[i]
        } else {
            assert_eq!(i, self.layers.len(), "layer index out of range");
            &mut self.head
        }
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut DenseLayer {
        &mut self.head
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    pub fn input_dim(&self) -> usize {
        self.layer(0).in_dim()
    }

    pub fn class_count(&self) -> usize {
        self.head.out_dim()
    }

    /// `(in_dim, out_dim)` for every layer, head last.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers().map(|l| (l.in_dim(), l.out_dim())).collect()
    }

    pub fn freeze_mask(&self) -> Vec<bool> {
        self.layers().map(|l| l.frozen).collect()
    }

    pub fn set_freeze_mask(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.depth());
        for (i, &f) in mask.iter().enumerate() {
            self.layer_mut(i).frozen = f;
        }
    }

    pub fn frozen_prefix(&self) -> Option<usize> {
        frozen_prefix(&self.freeze_mask())
    }

    pub fn frozen_count(&self) -> usize {
        self.layers().filter(|l| l.frozen).count()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    fn check_batch(&self, batch: &Tensor2) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor2, capture: bool) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let b = batch.rows();
        let mut flops = FlopReport::default();
        let mut feats = capture.then(|| Vec::with_capacity(self.depth()));
        let mut current = batch.clone();
        for layer in self.layers() {
            let (_, a) = layer.apply(&current)?;
            flops.fwd_flops += matmul_flops(b, layer.in_dim(), layer.out_dim());
            if let Some(f) = feats.as_mut() {
                f.push(a.clone());
            }
            current = a;
        }
        Ok(ForwardPass {
            logits: current,
            feats,
            flops,
        })
    }

    /// Argmax class per row.
    pub fn predict(&self, batch: &Tensor2) -> Result<Vec<usize>> {
        let logits = self.forward(batch, false)?.logits;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Mean softmax cross-entropy.
    pub fn loss(&self, batch: &Tensor2, labels: &[usize]) -> Result<f64> {
        self.check_labels(batch, labels)?;
        let logits = self.forward(batch, false)?.logits;
        Ok(softmax_xent(&logits, labels).0)
    }

    fn check_labels(&self, batch: &Tensor2, labels: &[usize]) -> Result<()> {
        if labels.len() != batch.rows() {
            return Err(Error::input(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.class_count()) {
            return Err(Error::input(format!(
                "label {bad} out of range for {} classes",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Gradients of the mean softmax cross-entropy.
    ///
    /// Frozen layers get no weight gradient, and the backward pass stops at
    /// the top of the frozen prefix.
    pub fn backward(&self, batch: &Tensor2, labels: &[usize]) -> Result<BackwardPass> {
        self.backward_impl(batch, labels, true)
    }

    /// Like [`Network::backward`] but computes every layer's weight gradient
    /// regardless of freeze flags. Reference path for tests.
    pub fn backward_ignoring_freeze(
        &self,
        batch: &Tensor2,
        labels: &[usize],
    ) -> Result<BackwardPass> {
        self.backward_impl(batch, labels, false)
    }

    fn backward_impl(
        &self,
        batch: &Tensor2,
        labels: &[usize],
        honor_freeze: bool,
    ) -> Result<BackwardPass> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let b = batch.rows();
        let depth = self.depth();

        let mut inputs = Vec::with_capacity(depth);
        let mut outputs = Vec::with_capacity(depth);
        let mut flops = FlopReport::default();
        let mut current = batch.clone();
        for layer in self.layers() {
            let (_, a) = layer.apply(&current)?;
            flops.fwd_flops += matmul_flops(b, layer.in_dim(), layer.out_dim());
            inputs.push(current);
            current = a.clone();
            outputs.push(a);
        }
        let (loss, mut delta) = softmax_xent(&current, labels);

        let frozen = |i: usize| honor_freeze && self.layer(i).frozen;
        let first_live = if honor_freeze {
            self.frozen_prefix().map_or(0, |p| p + 1)
        } else {
            0
        };

        let mut grads: Vec<Option<LayerGrad>> = vec![None; depth];
        for i in (first_live..depth).rev() {
            let layer = self.layer(i);
            if layer.activation == Activation::Relu {
                for (d, &a) in delta.data_mut().iter_mut().zip(outputs[i].data()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            flops.activation_mem_units += (b * layer.in_dim()) as u64;
            if !frozen(i) {
                let gw = inputs[i].t_matmul(&delta)?;
                flops.bwd_wgt_flops += matmul_flops(b, layer.in_dim(), layer.out_dim());
                let mut gb = vec![0.0; layer.out_dim()];
                for r in 0..b {
                    for (g, &d) in gb.iter_mut().zip(delta.row(r)) {
                        *g += d;
                    }
                }
                grads[i] = Some(LayerGrad {
                    weights: gw,
                    bias: gb,
                });
            }
            if i > first_live {
                delta = delta.matmul_t(&layer.weights)?;
                flops.bwd_act_flops += matmul_flops(b, layer.in_dim(), layer.out_dim());
            }
        }
        Ok(BackwardPass {
            grads: Gradients { layers: grads },
            loss,
            flops,
        })
    }

    /// Plain SGD. Frozen layers are left untouched even if a gradient is
    /// supplied for them.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        assert_eq!(
            grads.layers.len(),
            self.depth(),
            "one gradient slot per layer"
        );
        for (i, g) in grads.layers.iter().enumerate() {
            let layer = self.layer_mut(i);
            let Some(g) = g else { continue };
            if layer.frozen {
                continue;
            }
            for (w, gw) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= lr * gw;
            }
            for (bias, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *bias -= lr * gb;
            }
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Returns the mean loss and its gradient with respect to the logits.
fn softmax_xent(logits: &Tensor2, labels: &[usize]) -> (f64, Tensor2) {
    let b = logits.rows();
    let c = logits.cols();
    let mut grad = Tensor2::zeros(b, c);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[labels[r]];
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let y = if j == labels[r] { 1.0 } else { 0.0 };
            grad.set(r, j, (p - y) * inv_b);
        }
    }
    (loss * inv_b, grad)
}
