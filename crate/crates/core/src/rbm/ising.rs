//! Spin-convention view of a Boltzmann machine.
//!
//! With `s = 2z - 1`, `Σ b z + Σ W z z` equals `Σ h s + Σ J s s + const` where
//! `J = W/4` and `h_l = b_l/2 + Σ_{m~l} W_lm/4`. A sampler programmed with
//! `(h, J)` at inverse temperature `β` realizes the {0,1} machine whose mapped
//! parameters are `β·(h, J)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Connectivity;

use super::BmParams;

#[derive(Clone, Debug, PartialEq)]
pub struct IsingView {
    conn: Arc<Connectivity>,
    pub h: Vec<f64>,
    pub j: Vec<f64>,
    pub beta_eff: f64,
}

impl IsingView {
    pub fn new(conn: Arc<Connectivity>, h: Vec<f64>, j: Vec<f64>, beta_eff: f64) -> Result<Self> {
        check_beta(beta_eff)?;
        if h.len() != conn.num_nodes() || j.len() != conn.num_edges() {
            return Err(Error::Shape("ising fields do not match graph".into()));
        }
        Ok(IsingView { conn, h, j, beta_eff })
    }

    pub fn conn(&self) -> &Arc<Connectivity> {
        &self.conn
    }

    /// Spin energy of a {0,1} configuration, `Σ h s + Σ J s s` with `s = 2z-1`.
    /// Inactive units contribute nothing.
    pub fn spin_energy_bits(&self, z: &[u8]) -> f64 {
        let spin = |x: u8| if x != 0 { 1.0 } else { -1.0 };
        let mut e = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            if self.conn.is_active(i) {
                e += self.h[i] * spin(zi);
            }
        }
        for (&(l, m), &j) in self.conn.edges().iter().zip(&self.j) {
            e += j * spin(z[l]) * spin(z[m]);
        }
        e
    }

    pub fn with_beta(&self, beta_eff: f64) -> Result<Self> {
        check_beta(beta_eff)?;
        Ok(IsingView { beta_eff, ..self.clone() })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta_eff must be positive, got {beta}")));
    }
    Ok(())
}

/// Convention map {0,1} → spin at unit temperature.
pub(crate) fn binary_to_spin(p: &BmParams) -> (Vec<f64>, Vec<f64>) {
    let j: Vec<f64> = p.w.iter().map(|w| w / 4.0).collect();
    let mut h: Vec<f64> = p.b.iter().map(|b| b / 2.0).collect();
    for (&(l, m), &jj) in p.conn().edges().iter().zip(&j) {
        h[l] += jj;
        h[m] += jj;
    }
    (h, j)
}

/// Inverse of [`binary_to_spin`].
pub(crate) fn spin_to_binary(conn: &Connectivity, h: &[f64], j: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w: Vec<f64> = j.iter().map(|x| 4.0 * x).collect();
    let mut b: Vec<f64> = h.iter().map(|x| 2.0 * x).collect();
    for (&(l, m), &jj) in conn.edges().iter().zip(j) {
        b[l] -= 2.0 * jj;
        b[m] -= 2.0 * jj;
    }
    for (i, bi) in b.iter_mut().enumerate() {
        if !conn.is_active(i) {
            *bi = 0.0;
        }
    }
    (b, w)
}

/// Programmed spin parameters that realize `params` when sampled at `beta_eff`.
pub fn to_ising(params: &BmParams, beta_eff: f64) -> Result<IsingView> {
    check_beta(beta_eff)?;
    let (h, j) = binary_to_spin(params);
    let inv = 1.0 / beta_eff;
    Ok(IsingView {
        conn: params.conn().clone(),
        h: h.into_iter().map(|x| x * inv).collect(),
        j: j.into_iter().map(|x| x * inv).collect(),
        beta_eff,
    })
}

/// The {0,1} machine a sampler realizes when programmed with `view`.
pub fn from_ising(view: &IsingView) -> Result<BmParams> {
    check_beta(view.beta_eff)?;
    let h: Vec<f64> = view.h.iter().map(|x| x * view.beta_eff).collect();
    let j: Vec<f64> = view.j.iter().map(|x| x * view.beta_eff).collect();
    let (b, w) = spin_to_binary(&view.conn, &h, &j);
    BmParams::new(view.conn.clone(), b, w)
}
