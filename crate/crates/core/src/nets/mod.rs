//! Encoder and decoder stacks with hand-written backpropagation.
//!
//! Dense and gated-dense layers stand in for gated convolutions. A gated block
//! is `linear 2f → batchnorm → split (a, g) → a·σ(g) → ReLU → dropout`.

mod hier;
mod layer;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

pub use hier::{HierEncoder, HierGrads, HierOutput, LatentDraw};
pub use layer::{Activation, Layer, LayerKind, LayerSpec, Mode};

/// Parameter visitor callback: `(name, values, gradients)`.
pub type ParamVisitor<'a> = dyn FnMut(&str, &mut [f64], &mut [f64]) + 'a;

#[derive(Clone, Debug)]
pub struct NetStack {
    layers: Vec<Layer>,
    bn_frozen: bool,
    dropout_rng: ChaCha8Rng,
}

impl NetStack {
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("empty layer stack".into()));
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!("layer output {} feeds input {}", pair[0].out_dim, pair[1].in_dim)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.iter().map(|s| Layer::new(*s, &mut rng)).collect::<Result<_>>()?;
        Ok(NetStack { layers, bn_frozen: false, dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15) })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| *l.spec()).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec().in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec().out_dim
    }

    /// Training-mode forwards use running statistics while frozen.
    pub fn freeze_batchnorm(&mut self, frozen: bool) {
        self.bn_frozen = frozen;
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!("input has {} columns, stack expects {}", x.ncols(), self.in_dim())));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("empty input batch".into()));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode, self.bn_frozen, &mut self.dropout_rng);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {i}")));
            }
        }
        Ok(h)
    }

    /// Backpropagates `dy` through the last training forward, accumulating
    /// parameter gradients, and returns the input gradient.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let mut d = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            d = layer.backward(&d)?;
        }
        Ok(d)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Visits every trainable tensor with its gradient buffer.
    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("{prefix}{i}.w"), slice_mut(&mut l.w), slice_mut(&mut l.gw));
            f(&format!("{prefix}{i}.b"), l.b.as_slice_mut().unwrap(), l.gb.as_slice_mut().unwrap());
            if let Some(bn) = &mut l.bn {
                f(&format!("{prefix}{i}.bn.gamma"), bn.gamma.as_slice_mut().unwrap(), bn.grad_gamma.as_slice_mut().unwrap());
                f(&format!("{prefix}{i}.bn.beta"), bn.beta.as_slice_mut().unwrap(), bn.grad_beta.as_slice_mut().unwrap());
            }
        }
    }

    /// Visits non-trainable state (batchnorm running statistics).
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Some(bn) = &mut l.bn {
                f(&format!("{prefix}{i}.bn.running_mean"), bn.running_mean.as_slice_mut().unwrap());
                f(&format!("{prefix}{i}.bn.running_var"), bn.running_var.as_slice_mut().unwrap());
            }
        }
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, v, _| n += v.len());
        n
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Decoder pass: latent values to pixel logits.
pub fn decode(dec: &mut NetStack, zeta: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
    dec.forward(zeta, mode)
}

/// Per-row `Σ x log σ(o) + (1-x) log σ(-o)`.
pub fn bernoulli_loglik(logits: &Array2<f64>, x: &Array2<f64>) -> Result<Vec<f64>> {
    if logits.dim() != x.dim() {
        return Err(Error::Shape("logits and targets differ in shape".into()));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("targets must lie in [0,1]".into()));
    }
    Ok(logits
        .outer_iter()
        .zip(x.outer_iter())
        .map(|(o, t)| o.iter().zip(t).map(|(&o, &t)| t * log_sigmoid(o) + (1.0 - t) * log_sigmoid(-o)).sum())
        .collect())
}

/// Gradient of [`bernoulli_loglik`] with respect to the logits.
pub fn bernoulli_loglik_grad(logits: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    Zip::from(x).and(logits).map_collect(|&t, &o| t - sigmoid(o))
}
