//! Multi-sample objective `L_{K,D}` and its gradients.
//!
//! Each example gets `S = K·D` latent draws on rows `b·S .. (b+1)·S`; draw
//! `r = d·K + k` belongs to group `d`. With
//! `log w = log p(x|ζ) - κ (log q(ζ|x) + β H(ζ) + log Z)`, where `κ` is the KL
//! weight and `H` the bare prior energy, the objective is the mean over
//! examples and groups of `log (1/K) Σ_k w`. `K = D = 1` is the ELBO.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::calib::scaled_inference_gradient;
use crate::error::{Error, Result};
use crate::latent::{log_q_unit, log_q_unit_grad};
use crate::math::log_sum_exp;
use crate::nets::{bernoulli_loglik, bernoulli_loglik_grad, HierGrads, LatentDraw, Mode};
use crate::samplers::NegativePhase;

use super::Model;

/// Uniform noise driving the latent draws.
#[derive(Clone, Debug)]
pub struct Noise {
    pub rho1: Array2<f64>,
    pub rho2: Array2<f64>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(model: &Model, rows: usize, rng: &mut R) -> Self {
        let m = model.enc.mapping();
        let mut u = |n: usize| Array2::from_shape_simple_fn((rows, n), || rng.random::<f64>());
        let rho1 = u(m.group1.len());
        let rho2 = u(m.group2.len());
        Noise { rho1, rho2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub k: usize,
    pub d: usize,
    pub kl_weight: f64,
    pub draw: LatentDraw,
    /// Folded into the value only; it has no parameter gradient here.
    pub log_z: Option<f64>,
}

impl ObjectiveSpec {
    pub fn elbo(kl_weight: f64, tau: f64) -> Self {
        ObjectiveSpec { k: 1, d: 1, kl_weight, draw: LatentDraw::Smooth { tau }, log_z: None }
    }

    pub fn replicas(&self) -> usize {
        self.k * self.d
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveOutput {
    /// `L_{K,D}` averaged over examples and groups.
    pub value: f64,
    /// Mean reconstruction log-likelihood over all draws.
    pub rec: f64,
    /// Mean of `log q + β H` over all draws, plus `log Z` when known.
    pub kl: f64,
    /// `B × S` log importance weights.
    pub log_w: Array2<f64>,
}

impl Model {
    /// Evaluates the objective on `x` and, when `backward` is set, accumulates
    /// gradients of its negative into the model's gradient buffers.
    ///
    /// The prior gradient is `κβ (Σ_r c_r s(ζ_r) - E_model[s])` with the
    /// sufficient statistics `s`; `neg` supplies the model term and may be
    /// omitted to keep only the positive phase.
    pub fn objective(
        &mut self,
        x: &Array2<f64>,
        noise: &Noise,
        spec: &ObjectiveSpec,
        neg: Option<&NegativePhase>,
        mode: Mode,
        backward: bool,
    ) -> Result<ObjectiveOutput> {
        let (k, d) = (spec.k, spec.d);
        if k == 0 || d == 0 {
            return Err(Error::InvalidArgument("K and D must be at least 1".into()));
        }
        if backward && (mode != Mode::Train || !matches!(spec.draw, LatentDraw::Smooth { .. })) {
            return Err(Error::InvalidArgument("gradients need smoothed draws in training mode".into()));
        }
        let s = k * d;
        let b = x.nrows();
        let rows = b * s;
        let out = self.enc.forward(x, &noise.rho1, &noise.rho2, spec.draw, s, mode)?;
        let zeta = self.assemble(&out.values1, &out.values2);
        let idx: Vec<usize> = (0..rows).map(|r| r / s).collect();
        let x_rep = x.select(Axis(0), &idx);
        let logits = self.dec.forward(&zeta, mode)?;
        let rec = bernoulli_loglik(&logits, &x_rep)?;

        let beta = self.beta_eff;
        let kappa = spec.kl_weight;
        let log_z = spec.log_z.unwrap_or(0.0);
        let (energies, e_grads) = self.prior.energies_and_input_grads(&zeta.view());
        let mut log_w = Array2::zeros((b, s));
        let mut kl_sum = 0.0;
        for r in 0..rows {
            let l1 = out.logits1.row(r / s);
            let lq1: f64 = l1.iter().zip(out.values1.row(r)).map(|(&l, &v)| log_q_unit(l, v)).sum();
            let lq2: f64 = out.logits2.row(r).iter().zip(out.values2.row(r)).map(|(&l, &v)| log_q_unit(l, v)).sum();
            let kl = lq1 + lq2 + beta * energies[r] + log_z;
            kl_sum += kl;
            log_w[[r / s, r % s]] = rec[r] - kappa * kl;
        }
        if log_w.iter().all(|v: &f64| v.is_nan()) {
            return Err(Error::NonFinite("all importance weights".into()));
        }

        // c[b, r]: softmax within each group of K, divided by the number of groups.
        let mut value = 0.0;
        let mut c = Array2::zeros((b, s));
        let ln_k = (k as f64).ln();
        let norm = 1.0 / (b * d) as f64;
        for bi in 0..b {
            for g in 0..d {
                let lw: Vec<f64> = (0..k).map(|j| log_w[[bi, g * k + j]]).collect();
                let lse = log_sum_exp(&lw);
                value += (lse - ln_k) * norm;
                for (j, &v) in lw.iter().enumerate() {
                    c[[bi, g * k + j]] = (v - lse).exp() * norm;
                }
            }
        }
        let output = ObjectiveOutput { value, rec: rec.iter().sum::<f64>() / rows as f64, kl: kl_sum / rows as f64, log_w };
        if !backward {
            return Ok(output);
        }

        // Upstream gradient of the loss -L with respect to each log w.
        let up: Vec<f64> = (0..rows).map(|r| -c[[r / s, r % s]]).collect();
        let mut d_logits = bernoulli_loglik_grad(&logits, &x_rep);
        for (mut row, &u) in d_logits.outer_iter_mut().zip(&up) {
            row *= u;
        }
        let mut d_zeta = self.dec.backward(&d_logits)?;

        let n = self.num_latents();
        let mut e_grad = vec![0.0; n];
        for r in 0..rows {
            e_grad.iter_mut().zip(e_grads.row(r)).for_each(|(d, &g)| *d = g);
            scaled_inference_gradient(beta, &mut e_grad);
            let coef = -up[r] * kappa;
            for (dz, g) in d_zeta.row_mut(r).iter_mut().zip(&e_grad) {
                *dz += coef * g;
            }
        }
        // positive phase
        let weights: Vec<f64> = (0..rows).map(|r| c[[r / s, r % s]] * kappa * beta).collect();
        let (pos_b, pos_w) = self.prior.weighted_stats(&zeta.view(), &weights);
        self.prior_grad_b.iter_mut().zip(&pos_b).for_each(|(g, p)| *g += p);
        self.prior_grad_w.iter_mut().zip(&pos_w).for_each(|(g, p)| *g += p);
        if let Some(neg) = neg {
            if neg.mean.len() != n || neg.corr.len() != self.prior.num_edges() {
                return Err(Error::Shape("negative phase does not match the prior".into()));
            }
            let w = kappa * beta;
            self.prior_grad_b.iter_mut().zip(&neg.mean).for_each(|(g, m)| *g -= w * m);
            self.prior_grad_w.iter_mut().zip(&neg.corr).for_each(|(g, m)| *g -= w * m);
        }

        let mapping = self.enc.mapping().clone();
        let (n1, n2) = (mapping.group1.len(), mapping.group2.len());
        let mut g = HierGrads {
            d_logits1: Array2::zeros((b, n1)),
            d_values1: Array2::zeros((rows, n1)),
            d_logits2: Array2::zeros((rows, n2)),
            d_values2: Array2::zeros((rows, n2)),
        };
        for r in 0..rows {
            let q = up[r] * -kappa;
            for (j, &node) in mapping.group1.iter().enumerate() {
                let (dl, dv) = log_q_unit_grad(out.logits1[[r / s, j]], out.values1[[r, j]]);
                g.d_values1[[r, j]] = d_zeta[[r, node]] + q * dv;
                g.d_logits1[[r / s, j]] += q * dl;
            }
            for (j, &node) in mapping.group2.iter().enumerate() {
                let (dl, dv) = log_q_unit_grad(out.logits2[[r, j]], out.values2[[r, j]]);
                g.d_values2[[r, j]] = d_zeta[[r, node]] + q * dv;
                g.d_logits2[[r, j]] = q * dl;
            }
        }
        self.enc.backward(&g)?;
        Ok(output)
    }

    /// `B × K` log importance weights with hard latents in evaluation mode,
    /// processed in chunks of at most `max_rows` decoder rows.
    pub fn hard_log_weights<R: Rng + ?Sized>(
        &mut self,
        x: &Array2<f64>,
        k: usize,
        log_z: f64,
        max_rows: usize,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        let spec = ObjectiveSpec { k, d: 1, kl_weight: 1.0, draw: LatentDraw::Hard, log_z: Some(log_z) };
        let per_chunk = (max_rows / k).max(1);
        let mut out = Array2::zeros((x.nrows(), k));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + per_chunk).min(x.nrows());
            let xs = x.slice(ndarray::s![start..end, ..]).to_owned();
            let noise = Noise::draw(self, (end - start) * k, rng);
            let o = self.objective(&xs, &noise, &spec, None, Mode::Eval, false)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&o.log_w);
            start = end;
        }
        Ok(out)
    }
}
