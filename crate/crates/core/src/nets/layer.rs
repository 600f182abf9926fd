use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    GatedDense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub use_batchnorm: bool,
    pub dropout_rate: f64,
    /// Output nonlinearity of a dense layer; gated layers always end in ReLU.
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Dense, in_dim, out_dim, use_batchnorm: false, dropout_rate: 0.0, activation }
    }

    pub fn gated(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::GatedDense,
            in_dim,
            out_dim,
            use_batchnorm: true,
            dropout_rate: 0.0,
            activation: Activation::Relu,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    /// Width of the linear map, doubled for gated layers.
    pub fn linear_out(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.out_dim,
            LayerKind::GatedDense => 2 * self.out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {} outside [0,1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub grad_gamma: Array1<f64>,
    pub grad_beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            grad_gamma: Array1::zeros(dim),
            grad_beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            cache: None,
        }
    }

    /// Batch statistics when `batch_stats`, running statistics otherwise.
    fn forward(&mut self, x: &Array2<f64>, batch_stats: bool, keep_cache: bool) -> Array2<f64> {
        let (mean, inv_std) = if batch_stats {
            let n = x.nrows() as f64;
            let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
            let var = x.var_axis(Axis(0), 0.0);
            let unbiased = if x.nrows() > 1 { &var * (n / (n - 1.0)) } else { var.clone() };
            self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
            self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
            (mean, var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()))
        } else {
            (self.running_mean.clone(), self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()))
        };
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        self.cache = keep_cache.then_some(BnCache { xhat, inv_std, batch_stats });
        y
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let c = self.cache.as_ref().ok_or_else(|| Error::InvalidArgument("batchnorm backward without forward".into()))?;
        self.grad_gamma += &(dy * &c.xhat).sum_axis(Axis(0));
        self.grad_beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        if !c.batch_stats {
            return Ok(dxhat * &c.inv_std);
        }
        let n = dy.nrows() as f64;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &c.xhat).sum_axis(Axis(0));
        Ok((dxhat * n - &sum_d - &c.xhat * &sum_dx) * &c.inv_std / n)
    }
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Array2<f64>,
    /// Post-batchnorm linear output (both halves for gated layers).
    pre: Array2<f64>,
    /// Output before dropout.
    out: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
    pub(crate) gw: Array2<f64>,
    pub(crate) gb: Array1<f64>,
    pub(crate) bn: Option<BatchNorm>,
    cache: Option<LayerCache>,
}

impl Layer {
    /// Fan-in scaled uniform weights, zero biases, unit batchnorm scale.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan = spec.linear_out();
        let bound = 1.0 / (spec.in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((spec.in_dim, fan), |_| rng.random_range(-bound..bound));
        Ok(Layer {
            spec,
            w,
            b: Array1::zeros(fan),
            gw: Array2::zeros((spec.in_dim, fan)),
            gb: Array1::zeros(fan),
            bn: spec.use_batchnorm.then(|| BatchNorm::new(fan)),
            cache: None,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub(crate) fn forward(&mut self, x: &Array2<f64>, mode: Mode, bn_frozen: bool, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let train = mode == Mode::Train;
        let mut pre = x.dot(&self.w) + &self.b;
        if let Some(bn) = &mut self.bn {
            pre = bn.forward(&pre, train && !bn_frozen, train);
        }
        let out = match self.spec.kind {
            LayerKind::Dense => match self.spec.activation {
                Activation::Identity => pre.clone(),
                Activation::Relu => pre.mapv(|v| v.max(0.0)),
            },
            LayerKind::GatedDense => {
                let f = self.spec.out_dim;
                let a = pre.slice(s![.., ..f]);
                let g = pre.slice(s![.., f..]);
                Zip::from(&a).and(&g).map_collect(|&a, &g| (a * sigmoid(g)).max(0.0))
            }
        };
        let rate = self.spec.dropout_rate;
        let mask = (train && rate > 0.0).then(|| {
            let keep = 1.0 / (1.0 - rate);
            Array2::from_shape_fn(out.raw_dim(), |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        });
        let y = match &mask {
            Some(m) => &out * m,
            None => out.clone(),
        };
        if train {
            self.cache = Some(LayerCache { input: x.clone(), pre, out, mask });
        }
        y
    }

    pub(crate) fn backward(&mut self, dy: &Array2<f64>) -> Result<Array2<f64>> {
        let c = self.cache.as_ref().ok_or_else(|| Error::InvalidArgument("backward called without a training forward".into()))?;
        let d_out = match &c.mask {
            Some(m) => dy * m,
            None => dy.clone(),
        };
        let d_pre = match self.spec.kind {
            LayerKind::Dense => match self.spec.activation {
                Activation::Identity => d_out,
                Activation::Relu => Zip::from(&d_out).and(&c.pre).map_collect(|&d, &p| if p > 0.0 { d } else { 0.0 }),
            },
            LayerKind::GatedDense => {
                let f = self.spec.out_dim;
                let mut d_pre = Array2::zeros(c.pre.raw_dim());
                let a = c.pre.slice(s![.., ..f]);
                let g = c.pre.slice(s![.., f..]);
                for r in 0..d_out.nrows() {
                    for k in 0..f {
                        if c.out[[r, k]] <= 0.0 {
                            continue;
                        }
                        let sg = sigmoid(g[[r, k]]);
                        let d = d_out[[r, k]];
                        d_pre[[r, k]] = d * sg;
                        d_pre[[r, f + k]] = d * a[[r, k]] * sg * (1.0 - sg);
                    }
                }
                d_pre
            }
        };
        let d_lin = match &mut self.bn {
            Some(bn) => bn.backward(&d_pre)?,
            None => d_pre,
        };
        self.gw += &c.input.t().dot(&d_lin);
        self.gb += &d_lin.sum_axis(Axis(0));
        Ok(d_lin.dot(&self.w.t()))
    }

    pub(crate) fn zero_grad(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
        if let Some(bn) = &mut self.bn {
            bn.grad_gamma.fill(0.0);
            bn.grad_beta.fill(0.0);
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
        if let Some(bn) = &mut self.bn {
            bn.cache = None;
        }
    }
}
