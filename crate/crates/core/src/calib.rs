//! Online estimation of the effective inverse temperature of a black-box
//! sampler.
//!
//! A sampler programmed with spin parameters `(h, J)` is modeled as returning
//! Boltzmann draws at an unknown scale `β`. The estimate is moved along
//! `-E_hw[H] + E_aux[H]`, where the auxiliary draws come from population
//! annealing at `(β h, β J)` and `H` is evaluated with the bare `(h, J)`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mean;
use crate::rbm::{to_ising, BmParams, IsingView};
use crate::samplers::{population_annealing, EmulatorConfig, EmulatorSampler, PaConfig, SampleBatch, Sampler};

/// Lower bound used when projecting `β` back to positive values.
pub const MIN_BETA: f64 = 1e-4;
const HISTORY_CAP: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub enabled: bool,
    pub beta_init: f64,
    pub gamma: f64,
    /// Moving-average length applied to the raw updates.
    pub window: usize,
    /// Calibrate every `every` gradient steps.
    pub every: usize,
    pub aux: PaConfig,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig { enabled: false, beta_init: 1.0, gamma: 1e-3, window: 10, every: 1, aux: PaConfig::default() }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_init > 0.0 && self.beta_init.is_finite()) {
            return Err(Error::InvalidArgument(format!("calibration beta_init must be positive, got {}", self.beta_init)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("calibration gamma must be positive, got {}", self.gamma)));
        }
        if self.window == 0 || self.every == 0 {
            return Err(Error::InvalidArgument("calibration window and cadence must be positive".into()));
        }
        self.aux.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibState {
    beta_eff: f64,
    gamma: f64,
    window: usize,
    recent: VecDeque<f64>,
    history: VecDeque<(u64, f64)>,
}

impl CalibState {
    pub fn new(beta_init: f64, gamma: f64, window: usize) -> Result<Self> {
        CalibConfig { beta_init, gamma, window, ..CalibConfig::default() }.validate()?;
        Ok(CalibState { beta_eff: beta_init, gamma, window, recent: VecDeque::new(), history: VecDeque::new() })
    }

    pub fn from_config(cfg: &CalibConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.beta_init, cfg.gamma, cfg.window)
    }

    pub fn beta_eff(&self) -> f64 {
        self.beta_eff
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// `(step, β)` pairs, oldest first, capped in length.
    pub fn history(&self) -> impl Iterator<Item = &(u64, f64)> {
        self.history.iter()
    }

    /// Applies one smoothed update and returns the change in `β`.
    pub fn update(&mut self, step: u64, ising: &IsingView, hw: &SampleBatch, aux: &SampleBatch) -> Result<f64> {
        let raw = energy_gap(ising, hw, aux)?;
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(raw);
        let smoothed = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        let before = self.beta_eff;
        self.beta_eff = (before + self.gamma * smoothed).max(MIN_BETA);
        if self.history.len() == HISTORY_CAP {
            self.history.pop_front();
        }
        self.history.push_back((step, self.beta_eff));
        Ok(self.beta_eff - before)
    }
}

fn mean_spin_energy(ising: &IsingView, batch: &SampleBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("calibration needs nonempty sample batches".into()));
    }
    if batch.bits.ncols() != ising.conn().num_nodes() {
        return Err(Error::Shape("sample width does not match the ising graph".into()));
    }
    let e: Vec<f64> = batch
        .bits
        .outer_iter()
        .map(|row| ising.spin_energy_bits(row.as_slice().expect("standard layout")))
        .collect();
    Ok(mean(&e))
}

/// Raw update direction `-E_hw[H] + E_aux[H]` with bare spin energies.
pub fn energy_gap(ising: &IsingView, hw: &SampleBatch, aux: &SampleBatch) -> Result<f64> {
    Ok(mean_spin_energy(ising, aux)? - mean_spin_energy(ising, hw)?)
}

/// Functional form of [`CalibState::update`].
pub fn update_beta(state: &CalibState, step: u64, ising: &IsingView, hw: &SampleBatch, aux: &SampleBatch) -> Result<CalibState> {
    let mut next = state.clone();
    next.update(step, ising, hw, aux)?;
    Ok(next)
}

/// Scales the prior-energy pathway into the encoder by `β`.
pub fn scaled_inference_gradient(beta_eff: f64, grad: &mut [f64]) {
    if beta_eff != 1.0 {
        grad.iter_mut().for_each(|g| *g *= beta_eff);
    }
}

/// Draws auxiliary samples at the current estimate and updates it from a
/// batch returned by the sampler for the programmed parameters `bare`.
pub fn calibrate<R: Rng + ?Sized>(
    state: &mut CalibState,
    step: u64,
    bare: &BmParams,
    hw: &SampleBatch,
    aux_cfg: &PaConfig,
    rng: &mut R,
) -> Result<f64> {
    let ising = to_ising(bare, 1.0)?;
    let aux = population_annealing(&bare.scaled(state.beta_eff), aux_cfg, rng)?;
    state.update(step, &ising, hw, &aux)
}

/// Hidden and tracked temperature, one entry per update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrace {
    pub hidden: Vec<f64>,
    pub tracked: Vec<f64>,
}

impl RecoveryTrace {
    /// First update after which the estimate stays within `tol` of the
    /// hidden value.
    pub fn settled_at(&self, tol: f64) -> Option<usize> {
        let within: Vec<bool> = self.hidden.iter().zip(&self.tracked).map(|(h, t)| (h - t).abs() < tol).collect();
        let last_out = within.iter().rposition(|w| !w);
        match last_out {
            None if !within.is_empty() => Some(0),
            None => None,
            Some(i) if i + 1 < within.len() => Some(i + 1),
            Some(_) => None,
        }
    }
}

/// Runs `steps` calibration updates against the annealer emulator
/// programmed with `bare`, drawing `reads` samples per update.
pub fn recovery_trace(
    bare: &BmParams,
    emulator: EmulatorConfig,
    state: &mut CalibState,
    steps: usize,
    reads: usize,
    aux_cfg: &PaConfig,
    seed: u64,
) -> Result<RecoveryTrace> {
    let mut hw_sampler = EmulatorSampler::new(emulator, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut trace = RecoveryTrace::default();
    for step in 0..steps {
        let hw = hw_sampler.draw(bare, reads)?;
        trace.hidden.push(hw_sampler.hidden_beta().expect("emulator reports its temperature"));
        calibrate(state, step as u64, bare, &hw, aux_cfg, &mut rng)?;
        trace.tracked.push(state.beta_eff());
    }
    Ok(trace)
}
