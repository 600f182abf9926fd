//! Two-level hierarchical posterior `q(z₁|x) q(z₂|ζ₁,x)`.
//!
//! The trunk and first head run once per example; each example is then
//! replicated `reps` times (rows `b*reps .. (b+1)*reps`) and the second head
//! sees the replicated trunk features concatenated with that replica's `ζ₁`.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::HierarchyMapping;
use crate::latent::{hard_from_logit, smooth_unit, smooth_unit_grad};

use super::{LayerSpec, Mode, NetStack, ParamVisitor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentDraw {
    Smooth { tau: f64 },
    Hard,
}

#[derive(Clone, Debug)]
pub struct HierOutput {
    /// `B × |group1|`.
    pub logits1: Array2<f64>,
    /// `S × |group1|`, smoothed or hard.
    pub values1: Array2<f64>,
    /// `S × |group2|`.
    pub logits2: Array2<f64>,
    pub values2: Array2<f64>,
    pub reps: usize,
}

/// Upstream gradients of a scalar objective with respect to the outputs.
#[derive(Clone, Debug)]
pub struct HierGrads {
    pub d_logits1: Array2<f64>,
    pub d_values1: Array2<f64>,
    pub d_logits2: Array2<f64>,
    pub d_values2: Array2<f64>,
}

#[derive(Clone, Debug)]
struct HierCache {
    values1: Array2<f64>,
    values2: Array2<f64>,
    tau: f64,
    reps: usize,
}

#[derive(Clone, Debug)]
pub struct HierEncoder {
    pub trunk: NetStack,
    pub head1: NetStack,
    pub head2: NetStack,
    mapping: HierarchyMapping,
    cache: Option<HierCache>,
}

impl HierEncoder {
    pub fn new(trunk: &[LayerSpec], head1: &[LayerSpec], head2: &[LayerSpec], mapping: HierarchyMapping, seed: u64) -> Result<Self> {
        let trunk = NetStack::new(trunk, seed)?;
        let head1 = NetStack::new(head1, seed.wrapping_add(1))?;
        let head2 = NetStack::new(head2, seed.wrapping_add(2))?;
        let (n1, n2) = (mapping.group1.len(), mapping.group2.len());
        let f = trunk.out_dim();
        if head1.in_dim() != f || head1.out_dim() != n1 || head2.in_dim() != f + n1 || head2.out_dim() != n2 {
            return Err(Error::Shape(format!(
                "heads ({}→{}, {}→{}) do not fit trunk width {f} and groups {n1}/{n2}",
                head1.in_dim(),
                head1.out_dim(),
                head2.in_dim(),
                head2.out_dim()
            )));
        }
        Ok(HierEncoder { trunk, head1, head2, mapping, cache: None })
    }

    pub fn mapping(&self) -> &HierarchyMapping {
        &self.mapping
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    fn draw(logits: &Array2<f64>, rho: &Array2<f64>, draw: LatentDraw, reps: usize) -> Array2<f64> {
        let rows = rho.nrows();
        Array2::from_shape_fn((rows, rho.ncols()), |(r, k)| {
            let l = logits[[r / reps, k]];
            match draw {
                LatentDraw::Smooth { tau } => smooth_unit(l, rho[[r, k]], tau),
                LatentDraw::Hard => f64::from(hard_from_logit(l, rho[[r, k]])),
            }
        })
    }

    /// `rho1` and `rho2` have `x.nrows() * reps` rows.
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        rho1: &Array2<f64>,
        rho2: &Array2<f64>,
        draw: LatentDraw,
        reps: usize,
        mode: Mode,
    ) -> Result<HierOutput> {
        let rows = x.nrows() * reps;
        let (n1, n2) = (self.mapping.group1.len(), self.mapping.group2.len());
        if reps == 0 || rho1.dim() != (rows, n1) || rho2.dim() != (rows, n2) {
            return Err(Error::Shape("uniform noise does not match batch, replication and groups".into()));
        }
        let feat = self.trunk.forward(x, mode)?;
        let logits1 = self.head1.forward(&feat, mode)?;
        let values1 = Self::draw(&logits1, rho1, draw, reps);
        let idx: Vec<usize> = (0..rows).map(|r| r / reps).collect();
        let feat_rep = feat.select(Axis(0), &idx);
        let input2 = concatenate(Axis(1), &[feat_rep.view(), values1.view()]).expect("row counts agree");
        let logits2 = self.head2.forward(&input2, mode)?;
        let values2 = Self::draw(&logits2, rho2, draw, 1);
        self.cache = match (mode, draw) {
            (Mode::Train, LatentDraw::Smooth { tau }) => {
                Some(HierCache { values1: values1.clone(), values2: values2.clone(), tau, reps })
            }
            _ => None,
        };
        Ok(HierOutput { logits1, values1, logits2, values2, reps })
    }

    /// Chains upstream gradients through both smoothings, both heads and the
    /// trunk, accumulating parameter gradients.
    pub fn backward(&mut self, g: &HierGrads) -> Result<()> {
        let c = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("encoder backward needs a smoothed training forward".into()))?;
        let slope = |v: &Array2<f64>, d: &Array2<f64>| Zip::from(v).and(d).map_collect(|&z, &d| d * smooth_unit_grad(z, c.tau));
        let dl2 = &g.d_logits2 + &slope(&c.values2, &g.d_values2);
        let din2 = self.head2.backward(&dl2)?;
        let f = self.trunk.out_dim();
        let d_feat_rep = din2.slice(s![.., ..f]);
        let dv1 = &g.d_values1 + &din2.slice(s![.., f..]);
        let dl1_rep = slope(&c.values1, &dv1);
        let dl1 = &g.d_logits1 + &sum_replicas(&dl1_rep.view(), c.reps);
        let dfeat = self.head1.backward(&dl1)? + sum_replicas(&d_feat_rep, c.reps);
        self.trunk.backward(&dfeat)?;
        self.cache = Some(c);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.head1.zero_grad();
        self.head2.zero_grad();
    }

    pub fn freeze_batchnorm(&mut self, frozen: bool) {
        self.trunk.freeze_batchnorm(frozen);
        self.head1.freeze_batchnorm(frozen);
        self.head2.freeze_batchnorm(frozen);
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        self.trunk.visit_params("enc.trunk.", f);
        self.head1.visit_params("enc.head1.", f);
        self.head2.visit_params("enc.head2.", f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.trunk.visit_buffers("enc.trunk.", f);
        self.head1.visit_buffers("enc.head1.", f);
        self.head2.visit_buffers("enc.head2.", f);
    }
}

fn sum_replicas(a: &ndarray::ArrayView2<f64>, reps: usize) -> Array2<f64> {
    let rows = a.nrows() / reps;
    let mut out = Array2::zeros((rows, a.ncols()));
    for (r, row) in a.outer_iter().enumerate() {
        let mut o = out.row_mut(r / reps);
        o += &row;
    }
    out
}
