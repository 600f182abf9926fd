//! Exact diagonalization of a transverse-field Boltzmann machine on a handful
//! of units.
//!
//! The operator is `H = diag(H_cl(z)) - Γ Σ_l σx_l` in the computational basis,
//! with `H_cl` the classical energy of `params`. Only usable for tiny systems.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

use super::{exact_distribution, BmParams};

pub const MAX_QBM_UNITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QbmConfig {
    pub gamma: f64,
    pub max_units: usize,
}

impl Default for QbmConfig {
    fn default() -> Self {
        QbmConfig { gamma: 0.5, max_units: MAX_QBM_UNITS }
    }
}

/// Both distributions indexed by the binary state code of
/// [`super::ExactDistribution`].
#[derive(Clone, Debug)]
pub struct QbmDistributions {
    /// `⟨z|e^{-H}|z⟩ / Tr e^{-H}`.
    pub quantum: Vec<f64>,
    /// `e^{-H_cl(z)} / Tr e^{-H}`.
    pub classical_proxy: Vec<f64>,
    pub log_trace: f64,
}

pub fn qbm_exact(params: &BmParams, cfg: &QbmConfig) -> Result<QbmDistributions> {
    if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("transverse field must be >= 0, got {}", cfg.gamma)));
    }
    if cfg.max_units > MAX_QBM_UNITS {
        return Err(Error::InvalidArgument(format!("max_units {} above {MAX_QBM_UNITS}", cfg.max_units)));
    }
    let active = params.conn().num_active();
    if active > cfg.max_units {
        return Err(Error::SizeCap { active, cap: cfg.max_units });
    }
    let dist = exact_distribution(params)?;
    let n = dist.active.len();
    let dim = dist.num_states();
    let mut op = DMatrix::<f64>::zeros(dim, dim);
    for s in 0..dim {
        op[(s, s)] = dist.energies[s];
        for j in 0..n {
            op[(s, s ^ (1 << j))] = -cfg.gamma;
        }
    }
    let eig = SymmetricEigen::new(op);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|l| (-(l - lmin)).exp()).collect();
    let trace: f64 = weights.iter().sum();
    let log_trace = trace.ln() - lmin;
    let quantum: Vec<f64> = (0..dim)
        .map(|s| {
            let row = eig.eigenvectors.row(s);
            row.iter().zip(&weights).map(|(v, w)| v * v * w).sum::<f64>() / trace
        })
        .collect();
    let classical_proxy = dist.energies.iter().map(|e| (-e - log_trace).exp()).collect();
    Ok(QbmDistributions { quantum, classical_proxy, log_trace })
}
