//! Variational autoencoder with a Boltzmann-machine prior over the latent
//! graph, its training objectives, optimizer and training loop.

mod objective;
mod optim;
mod train;

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{hierarchy_mapping, Connectivity, GraphSpec, HierarchyScheme};
use crate::nets::{Activation, HierEncoder, LayerSpec, NetStack, ParamVisitor};
use crate::rbm::BmParams;

pub use objective::{Noise, ObjectiveOutput, ObjectiveSpec};
pub use optim::{kl_weight_at, lr_at, Adam, AdamConfig};
pub use train::{binarize_fixed, subset_indices, KdStage, TrainConfig, TrainOutcome, TrainState, Trainer};

/// Layer widths of the encoder and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Gated blocks of the shared encoder trunk.
    pub trunk: Vec<usize>,
    /// Hidden width of each posterior head; 0 makes the heads linear.
    pub head_hidden: usize,
    /// Gated blocks of the decoder before the output layer.
    pub decoder: Vec<usize>,
    pub decoder_dropout: f64,
    pub batchnorm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { trunk: vec![128, 128], head_hidden: 144, decoder: vec![128], decoder_dropout: 0.2, batchnorm: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_x_dim")]
    pub x_dim: usize,
    pub graph: GraphSpec,
    #[serde(default = "default_hierarchy")]
    pub hierarchy: HierarchyScheme,
    #[serde(default)]
    pub arch: ArchConfig,
}

fn default_x_dim() -> usize {
    784
}

fn default_hierarchy() -> HierarchyScheme {
    HierarchyScheme::Bipartite
}

fn head(input: usize, hidden: usize, out: usize) -> Vec<LayerSpec> {
    if hidden == 0 {
        vec![LayerSpec::dense(input, out, Activation::Identity)]
    } else {
        vec![LayerSpec::dense(input, hidden, Activation::Relu), LayerSpec::dense(hidden, out, Activation::Identity)]
    }
}

fn gated_chain(input: usize, widths: &[usize], batchnorm: bool, dropout: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(widths.len());
    let mut prev = input;
    for &w in widths {
        specs.push(LayerSpec::gated(prev, w).with_batchnorm(batchnorm).with_dropout(dropout));
        prev = w;
    }
    specs
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub enc: HierEncoder,
    pub dec: NetStack,
    /// Programmed (bare) prior parameters; the sampled prior is `beta_eff` times these.
    pub prior: BmParams,
    pub prior_grad_b: Vec<f64>,
    pub prior_grad_w: Vec<f64>,
    pub beta_eff: f64,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.x_dim == 0 {
            return Err(Error::InvalidArgument("data dimension must be positive".into()));
        }
        let conn = Arc::new(config.graph.build()?);
        let mapping = hierarchy_mapping(&conn, config.hierarchy)?;
        let (n1, n2) = (mapping.group1.len(), mapping.group2.len());
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidArgument("both hierarchy groups need at least one unit".into()));
        }
        let a = &config.arch;
        if a.trunk.is_empty() {
            return Err(Error::InvalidArgument("encoder trunk needs at least one block".into()));
        }
        let trunk = gated_chain(config.x_dim, &a.trunk, a.batchnorm, 0.0);
        let f = *a.trunk.last().expect("nonempty trunk");
        let head1 = head(f, a.head_hidden, n1);
        let head2 = head(f + n1, a.head_hidden, n2);
        let enc = HierEncoder::new(&trunk, &head1, &head2, mapping, seed)?;
        let n = conn.num_nodes();
        let mut dec_specs = gated_chain(n, &a.decoder, a.batchnorm, a.decoder_dropout);
        let last = a.decoder.last().copied().unwrap_or(n);
        dec_specs.push(LayerSpec::dense(last, config.x_dim, Activation::Identity));
        let dec = NetStack::new(&dec_specs, seed.wrapping_add(3))?;
        let prior = BmParams::zeros(conn);
        let (nb, nw) = (prior.num_nodes(), prior.num_edges());
        Ok(Model { config, enc, dec, prior, prior_grad_b: vec![0.0; nb], prior_grad_w: vec![0.0; nw], beta_eff: 1.0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn conn(&self) -> &Arc<Connectivity> {
        self.prior.conn()
    }

    pub fn num_latents(&self) -> usize {
        self.prior.num_nodes()
    }

    /// Prior actually sampled: the bare parameters at the effective temperature.
    pub fn effective_prior(&self) -> BmParams {
        self.prior.scaled(self.beta_eff)
    }

    pub fn set_prior(&mut self, prior: BmParams) -> Result<()> {
        if **prior.conn() != **self.prior.conn() {
            return Err(Error::Shape("prior graph differs from the model graph".into()));
        }
        self.prior = prior;
        Ok(())
    }

    /// Scatters group values into node positions; inactive nodes stay 0.
    pub fn assemble(&self, values1: &Array2<f64>, values2: &Array2<f64>) -> Array2<f64> {
        let m = self.enc.mapping();
        let mut z = Array2::zeros((values1.nrows(), self.num_latents()));
        for (k, &node) in m.group1.iter().enumerate() {
            z.column_mut(node).assign(&values1.column(k));
        }
        for (k, &node) in m.group2.iter().enumerate() {
            z.column_mut(node).assign(&values2.column(k));
        }
        z
    }

    pub fn zero_grad(&mut self) {
        self.enc.zero_grad();
        self.dec.zero_grad();
        self.prior_grad_b.fill(0.0);
        self.prior_grad_w.fill(0.0);
    }

    pub fn freeze_batchnorm(&mut self, frozen: bool) {
        self.enc.freeze_batchnorm(frozen);
        self.dec.freeze_batchnorm(frozen);
    }

    /// Visits every trainable tensor, networks first, then `prior.b`, `prior.w`.
    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_>) {
        self.enc.visit_params(f);
        self.dec.visit_params("dec.", f);
        f("prior.b", &mut self.prior.b, &mut self.prior_grad_b);
        f("prior.w", &mut self.prior.w, &mut self.prior_grad_w);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.enc.visit_buffers(f);
        self.dec.visit_buffers("dec.", f);
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, v, _| n += v.len());
        n
    }

    /// Clips biases and couplings in place; inactive biases remain 0.
    pub fn clip_prior(&mut self, clip_b: Option<f64>, clip_w: Option<f64>) {
        if let Some(c) = clip_b {
            self.prior.b.iter_mut().for_each(|x| *x = x.clamp(-c, c));
        }
        if let Some(c) = clip_w {
            self.prior.w.iter_mut().for_each(|x| *x = x.clamp(-c, c));
        }
    }

    pub fn params_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, v, _| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::GraphKind;

    pub(crate) fn tiny_config(x_dim: usize) -> ModelConfig {
        ModelConfig {
            x_dim,
            graph: GraphSpec::chimera(1, 2),
            hierarchy: HierarchyScheme::Bipartite,
            arch: ArchConfig { trunk: vec![12], head_hidden: 10, decoder: vec![12], decoder_dropout: 0.2, batchnorm: true },
        }
    }

    #[test]
    fn shapes_follow_graph_and_mapping() {
        let mut m = Model::new(tiny_config(9), 1).unwrap();
        assert_eq!(m.num_latents(), 16);
        let g = m.enc.mapping().clone();
        assert_eq!(g.group1.len() + g.group2.len(), 16);
        let names: Vec<String> = {
            let mut v = Vec::new();
            m.visit_params(&mut |n, _, _| v.push(n.to_string()));
            v
        };
        assert!(names.contains(&"prior.w".to_string()) && names.contains(&"dec.1.w".to_string()));
        assert!(m.num_params() > 0);
    }

    #[test]
    fn assemble_places_groups() {
        let m = Model::new(tiny_config(4), 2).unwrap();
        let g = m.enc.mapping().clone();
        let v1 = Array2::from_elem((2, g.group1.len()), 1.0);
        let v2 = Array2::from_elem((2, g.group2.len()), 0.5);
        let z = m.assemble(&v1, &v2);
        for &i in &g.group1 {
            assert_eq!(z[[1, i]], 1.0);
        }
        for &i in &g.group2 {
            assert_eq!(z[[0, i]], 0.5);
        }
    }

    #[test]
    fn masked_units_are_left_out() {
        let mut cfg = tiny_config(4);
        cfg.graph.dead = vec![3, 9];
        let m = Model::new(cfg, 3).unwrap();
        let g = m.enc.mapping();
        assert_eq!(g.group1.len() + g.group2.len(), 14);
        assert!(!g.group1.contains(&3) && !g.group2.contains(&9));
    }

    #[test]
    fn bernoulli_and_complete_models_build() {
        for kind in [GraphKind::Bernoulli, GraphKind::Complete] {
            let cfg = ModelConfig { graph: GraphSpec::with_nodes(kind, 10), ..tiny_config(5) };
            let m = Model::new(cfg, 4).unwrap();
            assert_eq!(m.num_latents(), 10);
        }
        let cfg = ModelConfig { graph: GraphSpec::with_nodes(GraphKind::Bernoulli, 1), ..tiny_config(5) };
        assert!(Model::new(cfg, 4).is_err());
    }

    #[test]
    fn clipping_bounds_prior() {
        let mut m = Model::new(tiny_config(4), 5).unwrap();
        m.prior.b.iter_mut().for_each(|x| *x = 7.0);
        m.prior.w.iter_mut().for_each(|x| *x = -9.0);
        m.clip_prior(Some(2.0), Some(1.0));
        assert!(m.prior.b.iter().all(|&x| x == 2.0));
        assert!(m.prior.w.iter().all(|&x| x == -1.0));
    }
}
