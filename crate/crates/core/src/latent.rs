//! Discrete latent reparameterization.
//!
//! A unit with posterior probability `q = σ(l)` is drawn as
//! `z = Θ[ρ - (1 - q)]` with `ρ ~ U(0,1)`. Replacing the step with a sigmoid of
//! temperature `τ` gives `ζ = σ((σ⁻¹(ρ) + l)/τ)`, differentiable in `l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_sigmoid, logit, sigmoid};

/// Clamp applied to `ρ` before the inverse sigmoid.
pub const RHO_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub tau: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { tau: 1.0 / 7.0 }
    }
}

impl SmoothingConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        Ok(SmoothingConfig { tau })
    }
}

fn check_unit_interval(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument(format!("{name} must lie in [0,1]")));
    }
    Ok(())
}

/// `z_l = 1` iff `ρ_l ≥ 1 - q_l`.
pub fn hard_sample(q: &[f64], rho: &[f64]) -> Result<Vec<u8>> {
    if q.len() != rho.len() {
        return Err(Error::Shape("q and rho lengths differ".into()));
    }
    check_unit_interval("q", q)?;
    check_unit_interval("rho", rho)?;
    Ok(q.iter().zip(rho).map(|(&q, &r)| u8::from(r >= 1.0 - q)).collect())
}

/// Hard sample directly from logits, the `τ → 0` limit of [`smooth_sample`].
#[inline]
pub fn hard_from_logit(l: f64, rho: f64) -> u8 {
    u8::from(rho >= 1.0 - sigmoid(l))
}

#[inline]
pub fn clamp_rho(rho: f64) -> f64 {
    rho.clamp(RHO_EPS, 1.0 - RHO_EPS)
}

/// Smoothed sample of one unit.
#[inline]
pub fn smooth_unit(l: f64, rho: f64, tau: f64) -> f64 {
    sigmoid((logit(clamp_rho(rho)) + l) / tau)
}

/// `∂ζ/∂l` expressed through the sample itself.
#[inline]
pub fn smooth_unit_grad(zeta: f64, tau: f64) -> f64 {
    zeta * (1.0 - zeta) / tau
}

pub fn smooth_sample(l: &[f64], rho: &[f64], tau: f64) -> Result<Vec<f64>> {
    SmoothingConfig::new(tau)?;
    if l.len() != rho.len() {
        return Err(Error::Shape("logits and rho lengths differ".into()));
    }
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    check_unit_interval("rho", rho)?;
    Ok(l.iter().zip(rho).map(|(&l, &r)| smooth_unit(l, r, tau)).collect())
}

/// Factorial Bernoulli log-density `Σ v log σ(l) + (1-v) log σ(-l)`, valid
/// for discrete `z` and smoothed `ζ` alike.
pub fn log_q(l: &[f64], v: &[f64]) -> Result<f64> {
    if l.len() != v.len() {
        return Err(Error::Shape("logits and values lengths differ".into()));
    }
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(l.iter().zip(v).map(|(&l, &v)| log_q_unit(l, v)).sum())
}

#[inline]
pub fn log_q_unit(l: f64, v: f64) -> f64 {
    v * log_sigmoid(l) + (1.0 - v) * log_sigmoid(-l)
}

/// Partials of [`log_q_unit`]: `(∂/∂l, ∂/∂v) = (v - σ(l), l)`.
#[inline]
pub fn log_q_unit_grad(l: f64, v: f64) -> (f64, f64) {
    (v - sigmoid(l), l)
}
