//! Negative-phase samplers behind one black-box interface.
//!
//! Every backend receives the *programmed* {0,1} parameters. Classical
//! backends sample exactly that machine; the annealer emulator realizes it at
//! a hidden, drifting effective temperature and with control noise.

mod emulator;
mod exact;
mod gibbs;
mod pa;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::BmParams;

pub use emulator::{DriftConfig, EmulatorConfig, EmulatorPreset, EmulatorSampler};
pub use exact::ExactSampler;
pub(crate) use exact::sample_enumerated;
pub use gibbs::{block_gibbs_sweep, gibbs_sweep_at, pcd_draw, GibbsSampler, PcdSampler};
pub use pa::{linear_ladder, population_annealing, PaConfig, PaSampler, Resample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Gibbs,
    Pcd,
    Pa,
    Emulator,
    Exact,
}

/// Non-fatal backend events, surfaced in the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SamplerEvent {
    /// Programmed fields exceeded the emulator range and were clamped.
    Clamp { transform: usize, fields: usize, couplings: usize },
    /// Hidden effective temperature after a drift step.
    Drift { beta: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub log_z: Option<f64>,
    pub log_z_se: Option<f64>,
    pub events: Vec<SamplerEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub bits: Array2<u8>,
    pub source: SampleSource,
    pub meta: SampleMeta,
}

impl SampleBatch {
    pub fn new(bits: Array2<u8>, source: SampleSource) -> Self {
        SampleBatch { bits, source, meta: SampleMeta::default() }
    }

    pub fn len(&self) -> usize {
        self.bits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.nrows() == 0
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.bits.mapv(f64::from)
    }

    /// Sample means of `z_l` and `z_l z_m` over the batch.
    pub fn moments(&self, params: &BmParams) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("empty sample batch".into()));
        }
        let weights = vec![1.0 / self.len() as f64; self.len()];
        let (mean, corr) = params.weighted_stats(&self.to_f64().view(), &weights);
        Ok((mean, corr))
    }
}

/// Model expectations of the sufficient statistics, the negative phase.
#[derive(Clone, Debug)]
pub struct NegativePhase {
    pub mean: Vec<f64>,
    pub corr: Vec<f64>,
    pub batch: Option<SampleBatch>,
}

pub trait Sampler {
    fn source(&self) -> SampleSource;

    /// Draws `n` configurations. Rows are {0,1}; inactive columns are 0.
    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch>;

    /// Negative-phase statistics; backends with analytic moments may override.
    fn negative_phase(&mut self, params: &BmParams, n: usize) -> Result<NegativePhase> {
        let batch = self.draw(params, n)?;
        let (mean, corr) = batch.moments(params)?;
        Ok(NegativePhase { mean, corr, batch: Some(batch) })
    }

    /// Hidden effective temperature, if the backend has one.
    fn hidden_beta(&self) -> Option<f64> {
        None
    }
}

/// Serializable backend choice, as written in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerSpec {
    Exact {
        #[serde(default)]
        analytic: bool,
    },
    Gibbs {
        #[serde(default = "default_burn_in")]
        burn_in: usize,
    },
    Pcd {
        #[serde(default = "default_pcd_sweeps")]
        sweeps: usize,
    },
    Pa(PaConfig),
    Emulator(EmulatorConfig),
}

fn default_burn_in() -> usize {
    200
}

fn default_pcd_sweeps() -> usize {
    1
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec::Pcd { sweeps: default_pcd_sweeps() }
    }
}

impl SamplerSpec {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Sampler>> {
        Ok(match self {
            SamplerSpec::Exact { analytic } => Box::new(ExactSampler::new(seed).analytic(*analytic)),
            SamplerSpec::Gibbs { burn_in } => Box::new(GibbsSampler::new(*burn_in, seed)),
            SamplerSpec::Pcd { sweeps } => Box::new(PcdSampler::new(*sweeps, seed)),
            SamplerSpec::Pa(cfg) => {
                cfg.validate()?;
                Box::new(PaSampler::new(cfg.clone(), seed))
            }
            SamplerSpec::Emulator(cfg) => Box::new(EmulatorSampler::new(cfg.clone(), seed)?),
        })
    }
}

/// Uniform random {0,1} states on the active units.
pub(crate) fn uniform_bits<R: Rng + ?Sized>(params: &BmParams, n: usize, rng: &mut R) -> Array2<u8> {
    let conn = params.conn();
    Array2::from_shape_fn((n, params.num_nodes()), |(_, j)| {
        if conn.is_active(j) {
            rng.random::<bool>() as u8
        } else {
            0
        }
    })
}
