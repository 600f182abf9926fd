//! Boltzmann-machine parameters and energies.
//!
//! Latent units live in `{0,1}` and the energy is
//! `H(v) = Σ_l b_l v_l + Σ_{(l,m)∈E} W_lm v_l v_m`, so `p(z) ∝ exp(-H(z))`.
//! The same expression is evaluated on smoothed `ζ ∈ [0,1]` during training.
//! The spin-convention bridge used by the annealer side lives in [`ising`].

mod exact;
mod ising;
mod qbm;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Connectivity;

pub use exact::{exact_distribution, exact_log_z, exact_moments, ExactDistribution, MAX_EXACT_UNITS};
pub use ising::{from_ising, to_ising, IsingView};
pub use qbm::{qbm_exact, QbmConfig, QbmDistributions, MAX_QBM_UNITS};

#[derive(Clone, Debug, PartialEq)]
pub struct BmParams {
    conn: Arc<Connectivity>,
    /// Biases, one per node.
    pub b: Vec<f64>,
    /// Couplings, one per edge of `conn` in edge order.
    pub w: Vec<f64>,
}

/// Serializable parameter section; the graph is stored alongside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BmParamsDoc {
    pub b: Vec<f64>,
    pub w: Vec<f64>,
}

impl BmParams {
    pub fn zeros(conn: Arc<Connectivity>) -> Self {
        let n = conn.num_nodes();
        let e = conn.num_edges();
        BmParams { conn, b: vec![0.0; n], w: vec![0.0; e] }
    }

    pub fn new(conn: Arc<Connectivity>, b: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if b.len() != conn.num_nodes() || w.len() != conn.num_edges() {
            return Err(Error::Shape(format!(
                "params ({} biases, {} weights) do not match graph ({} nodes, {} edges)",
                b.len(),
                w.len(),
                conn.num_nodes(),
                conn.num_edges()
            )));
        }
        if b.iter().chain(&w).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("boltzmann machine parameters".into()));
        }
        for (i, &bi) in b.iter().enumerate() {
            if !conn.is_active(i) && bi != 0.0 {
                return Err(Error::InvalidArgument(format!("inactive node {i} has nonzero bias")));
            }
        }
        Ok(BmParams { conn, b, w })
    }

    /// Uniform random parameters in `[-bias_scale, bias_scale]` and
    /// `[-weight_scale, weight_scale]`; inactive nodes stay at zero.
    pub fn random<R: Rng + ?Sized>(conn: Arc<Connectivity>, bias_scale: f64, weight_scale: f64, rng: &mut R) -> Self {
        let b = (0..conn.num_nodes())
            .map(|i| if conn.is_active(i) { rng.random_range(-1.0..=1.0) * bias_scale } else { 0.0 })
            .collect();
        let w = (0..conn.num_edges()).map(|_| rng.random_range(-1.0..=1.0) * weight_scale).collect();
        BmParams { conn, b, w }
    }

    pub fn conn(&self) -> &Arc<Connectivity> {
        &self.conn
    }

    pub fn num_nodes(&self) -> usize {
        self.conn.num_nodes()
    }

    pub fn num_edges(&self) -> usize {
        self.conn.num_edges()
    }

    pub fn scaled(&self, s: f64) -> Self {
        BmParams {
            conn: self.conn.clone(),
            b: self.b.iter().map(|x| x * s).collect(),
            w: self.w.iter().map(|x| x * s).collect(),
        }
    }

    /// Copy with all couplings zeroed.
    pub fn without_couplings(&self) -> Self {
        BmParams { conn: self.conn.clone(), b: self.b.clone(), w: vec![0.0; self.w.len()] }
    }

    pub fn weight_l1(&self) -> f64 {
        self.w.iter().map(|x| x.abs()).sum()
    }

    pub fn to_doc(&self) -> BmParamsDoc {
        BmParamsDoc { b: self.b.clone(), w: self.w.clone() }
    }

    pub fn energy_row(&self, v: &[f64]) -> f64 {
        let mut h: f64 = self.b.iter().zip(v).map(|(b, x)| b * x).sum();
        for (&(l, m), &w) in self.conn.edges().iter().zip(&self.w) {
            h += w * v[l] * v[m];
        }
        h
    }

    pub fn energy_bits(&self, z: &[u8]) -> f64 {
        let mut h = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            if zi != 0 {
                h += self.b[i];
            }
        }
        for (&(l, m), &w) in self.conn.edges().iter().zip(&self.w) {
            if z[l] != 0 && z[m] != 0 {
                h += w;
            }
        }
        h
    }

    /// `∂H/∂z_node = b_node + Σ_m W_{node,m} z_m`.
    #[inline]
    pub fn local_field(&self, z: &[u8], node: usize) -> f64 {
        let mut f = self.b[node];
        for &(m, e) in self.conn.neighbors(node) {
            if z[m] != 0 {
                f += self.w[e];
            }
        }
        f
    }

    /// Gradient of `H` with respect to the (possibly smoothed) unit values.
    pub fn energy_input_grad(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (&(l, m), &w) in self.conn.edges().iter().zip(&self.w) {
            out[l] += w * v[m];
            out[m] += w * v[l];
        }
    }

    /// Dense products pay off once the graph has more than about an eighth
    /// of all possible edges.
    fn prefers_dense(&self) -> bool {
        let n = self.num_nodes();
        self.num_edges() * 8 > n * n
    }

    /// Symmetric `n × n` coupling matrix with zero diagonal.
    pub fn dense_couplings(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut m = Array2::zeros((n, n));
        for (&(l, k), &w) in self.conn.edges().iter().zip(&self.w) {
            m[[l, k]] = w;
            m[[k, l]] = w;
        }
        m
    }

    /// Energies of all rows of `v` and their input gradients.
    pub fn energies_and_input_grads(&self, v: &ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let b = ndarray::ArrayView1::from(&self.b[..]);
        if self.prefers_dense() {
            let wv = v.dot(&self.dense_couplings());
            let e = v.dot(&b) + 0.5 * (&wv * v).sum_axis(Axis(1));
            return (e.to_vec(), wv + &b);
        }
        let mut grads = Array2::zeros(v.raw_dim());
        let mut energies = Vec::with_capacity(v.nrows());
        for (row, mut g) in v.outer_iter().zip(grads.outer_iter_mut()) {
            let row = row.to_vec();
            energies.push(self.energy_row(&row));
            self.energy_input_grad(&row, g.as_slice_mut().expect("fresh array is contiguous"));
        }
        (energies, grads)
    }

    /// Weighted sufficient statistics `(Σ_r c_r v_rl, Σ_r c_r v_rl v_rm)`.
    pub fn weighted_stats(&self, v: &ArrayView2<f64>, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = ndarray::ArrayView1::from(c);
        let gb = v.t().dot(&c).to_vec();
        if self.prefers_dense() {
            let cv = v * &c.view().insert_axis(Axis(1));
            let m = v.t().dot(&cv);
            let gw = self.conn.edges().iter().map(|&(l, k)| m[[l, k]]).collect();
            return (gb, gw);
        }
        let mut gw = vec![0.0; self.num_edges()];
        for (row, &cr) in v.outer_iter().zip(c.iter()) {
            if cr == 0.0 {
                continue;
            }
            for (g, &(l, k)) in gw.iter_mut().zip(self.conn.edges()) {
                *g += cr * row[l] * row[k];
            }
        }
        (gb, gw)
    }

    fn check_batch(&self, z: &ArrayView2<f64>) -> Result<()> {
        if z.ncols() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "batch has {} columns, graph has {} nodes",
                z.ncols(),
                self.num_nodes()
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("energy input batch".into()));
        }
        Ok(())
    }
}

/// Batched energies, one per row of `z`.
pub fn energy(params: &BmParams, z: ArrayView2<f64>) -> Result<Vec<f64>> {
    params.check_batch(&z)?;
    Ok(z
        .outer_iter()
        .map(|row| match row.as_slice() {
            Some(s) => params.energy_row(s),
            None => params.energy_row(&row.to_vec()),
        })
        .collect())
}

/// Batch-averaged sufficient statistics: `(⟨v_l⟩, ⟨v_l v_m⟩)`, which are the
/// gradients of the mean energy with respect to `b` and `W`.
pub fn grad_energy(params: &BmParams, z: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_batch(&z)?;
    let n = z.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let weights = vec![1.0 / n as f64; n];
    Ok(params.weighted_stats(&z, &weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_bernoulli, build_chimera, build_complete};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> BmParams {
        let conn = Arc::new(build_complete(2).unwrap());
        BmParams::new(conn, vec![1.0, -2.0], vec![3.0]).unwrap()
    }

    /// Brute-force reference straight from the definition.
    fn brute_energy(p: &BmParams, v: &[f64]) -> f64 {
        let mut h = 0.0;
        for l in 0..v.len() {
            h += p.b[l] * v[l];
        }
        for (e, &(l, m)) in p.conn().edges().iter().enumerate() {
            h += p.w[e] * v[l] * v[m];
        }
        h
    }

    #[test]
    fn hand_computed_energy() {
        let p = pair();
        let e = energy(&p, array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(e, vec![2.0]);
        assert_eq!(brute_energy(&p, &[1.0, 1.0]), 2.0);
        assert_eq!(p.energy_bits(&[1, 1]), 2.0);
        let zero = energy(&p, array![[0.0, 0.0]].view()).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn zero_params_zero_energy() {
        let conn = Arc::new(build_chimera(1, 1, 4).unwrap());
        let p = BmParams::zeros(conn);
        let z = Array2::from_elem((3, 8), 0.7);
        assert!(energy(&p, z.view()).unwrap().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn energy_errors() {
        let p = pair();
        assert!(energy(&p, Array2::zeros((1, 3)).view()).is_err());
        assert!(energy(&p, array![[f64::NAN, 0.0]].view()).is_err());
        let conn = Arc::new(build_complete(2).unwrap());
        assert!(BmParams::new(conn, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn grad_energy_extremes() {
        let conn = Arc::new(build_chimera(1, 1, 4).unwrap());
        let p = BmParams::zeros(conn);
        let (gb, gw) = grad_energy(&p, Array2::from_elem((5, 8), 1.0).view()).unwrap();
        assert!(gb.iter().chain(&gw).all(|&g| g == 1.0));
        let (gb, gw) = grad_energy(&p, Array2::zeros((5, 8)).view()).unwrap();
        assert!(gb.iter().chain(&gw).all(|&g| g == 0.0));
    }

    #[test]
    fn grad_energy_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conn = Arc::new(build_complete(4).unwrap());
        let p = BmParams::random(conn, 1.0, 1.0, &mut rng);
        let z = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>());
        let mean_energy = |q: &BmParams| energy(q, z.view()).unwrap().iter().sum::<f64>() / 6.0;
        let (gb, gw) = grad_energy(&p, z.view()).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = p.clone();
            up.b[i] += h;
            let mut dn = p.clone();
            dn.b[i] -= h;
            let fd = (mean_energy(&up) - mean_energy(&dn)) / (2.0 * h);
            assert!(((fd - gb[i]) / gb[i]).abs() < 1e-8, "b[{i}]: {fd} vs {}", gb[i]);
        }
        for e in 0..p.num_edges() {
            let mut up = p.clone();
            up.w[e] += h;
            let mut dn = p.clone();
            dn.w[e] -= h;
            let fd = (mean_energy(&up) - mean_energy(&dn)) / (2.0 * h);
            assert!(((fd - gw[e]) / gw[e]).abs() < 1e-8, "w[{e}]: {fd} vs {}", gw[e]);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conn = Arc::new(build_chimera(1, 2, 4).unwrap());
        let p = BmParams::random(conn, 1.0, 1.0, &mut rng);
        let v: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let mut g = vec![0.0; 16];
        p.energy_input_grad(&v, &mut g);
        for i in 0..16 {
            let mut a = v.clone();
            a[i] += 1e-6;
            let mut c = v.clone();
            c[i] -= 1e-6;
            let fd = (p.energy_row(&a) - p.energy_row(&c)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn bernoulli_params_have_no_weights() {
        let p = BmParams::zeros(Arc::new(build_bernoulli(7).unwrap()));
        assert!(p.w.is_empty());
        assert_eq!(p.b.len(), 7);
    }

    #[test]
    fn batched_paths_match_row_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for conn in [build_complete(7).unwrap(), build_chimera(1, 2, 4).unwrap()] {
            let p = BmParams::random(Arc::new(conn), 1.0, 1.0, &mut rng);
            let n = p.num_nodes();
            let v = Array2::from_shape_fn((5, n), |_| rng.random::<f64>());
            let c: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let (e, g) = p.energies_and_input_grads(&v.view());
            let (sb, sw) = p.weighted_stats(&v.view(), &c);
            let mut ref_g = vec![0.0; n];
            for (r, row) in v.outer_iter().enumerate() {
                let row = row.to_vec();
                assert!((e[r] - brute_energy(&p, &row)).abs() < 1e-12);
                p.energy_input_grad(&row, &mut ref_g);
                for (a, b) in g.row(r).iter().zip(&ref_g) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            for l in 0..n {
                let want: f64 = (0..5).map(|r| c[r] * v[[r, l]]).sum();
                assert!((sb[l] - want).abs() < 1e-12);
            }
            for (e, &(l, m)) in p.conn().edges().iter().enumerate() {
                let want: f64 = (0..5).map(|r| c[r] * v[[r, l]] * v[[r, m]]).sum();
                assert!((sw[e] - want).abs() < 1e-12);
            }
        }
    }
}
