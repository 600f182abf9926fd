//! Software stand-in for an annealer used as a black-box sampler.
//!
//! Each call programs the spin-convention fields under random spin-reversal
//! gauges, perturbs them with Gaussian control error, clamps them to the
//! device range, and samples the classical Boltzmann distribution at a hidden
//! effective temperature that follows a mean-reverting walk across calls.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rbm::{exact_distribution, from_ising, to_ising, BmParams, IsingView, MAX_EXACT_UNITS};

use super::exact::sample_enumerated;
use super::{gibbs_sweep_at, uniform_bits, SampleBatch, SampleSource, Sampler, SamplerEvent};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Stationary standard deviation of `β_eff`.
    pub amplitude: f64,
    /// Mean-reversion time, in calls.
    pub timescale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmulatorPreset {
    LowNoise,
    Interim,
    Baseline,
}

impl std::str::FromStr for EmulatorPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low-noise" => Ok(EmulatorPreset::LowNoise),
            "interim" => Ok(EmulatorPreset::Interim),
            "baseline" => Ok(EmulatorPreset::Baseline),
            other => Err(Error::InvalidArgument(format!("unknown emulator preset '{other}'"))),
        }
    }
}

impl EmulatorPreset {
    pub fn config(self) -> EmulatorConfig {
        let (beta0, amplitude, timescale, sigma) = match self {
            EmulatorPreset::LowNoise => (1.0, 0.02, 200.0, 0.01),
            EmulatorPreset::Interim => (0.8, 0.05, 100.0, 0.03),
            EmulatorPreset::Baseline => (0.6, 0.1, 50.0, 0.08),
        };
        EmulatorConfig {
            beta0,
            drift: DriftConfig { amplitude, timescale },
            sigma_h: sigma,
            sigma_j: sigma,
            range_h: 2.0,
            range_j: 1.0,
            ..EmulatorConfig::ideal()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulatorConfig {
    pub beta0: f64,
    pub drift: DriftConfig,
    pub sigma_h: f64,
    pub sigma_j: f64,
    pub range_h: f64,
    pub range_j: f64,
    pub n_transforms: usize,
    pub reads_per_transform: usize,
    /// Overrides the seed handed to the sampler when set.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Sweeps per read when the instance is too large to enumerate.
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
}

fn default_sweeps() -> usize {
    64
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        EmulatorPreset::LowNoise.config()
    }
}

impl EmulatorConfig {
    /// Noise-free, drift-free, unit temperature, effectively unbounded range.
    pub fn ideal() -> Self {
        EmulatorConfig {
            beta0: 1.0,
            drift: DriftConfig { amplitude: 0.0, timescale: 1.0 },
            sigma_h: 0.0,
            sigma_j: 0.0,
            range_h: 1e9,
            range_j: 1e9,
            n_transforms: 5,
            reads_per_transform: 200,
            seed: None,
            sweeps: default_sweeps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.beta0 > 0.0
            && self.drift.amplitude >= 0.0
            && self.drift.timescale > 0.0
            && self.sigma_h >= 0.0
            && self.sigma_j >= 0.0
            && self.range_h > 0.0
            && self.range_j > 0.0
            && self.n_transforms > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid emulator config {self:?}")));
        }
        Ok(())
    }

    /// Default read count, `n_transforms · reads_per_transform`.
    pub fn default_reads(&self) -> usize {
        self.n_transforms * self.reads_per_transform
    }
}

const MIN_BETA: f64 = 1e-3;

pub struct EmulatorSampler {
    cfg: EmulatorConfig,
    beta: f64,
    calls: u64,
    rng: ChaCha8Rng,
}

impl EmulatorSampler {
    pub fn new(cfg: EmulatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed.unwrap_or(seed);
        Ok(EmulatorSampler { beta: cfg.beta0, cfg, calls: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn config(&self) -> &EmulatorConfig {
        &self.cfg
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// One Ornstein-Uhlenbeck step of the hidden temperature.
    fn advance_drift(&mut self) {
        let d = self.cfg.drift;
        if d.amplitude == 0.0 {
            return;
        }
        let decay = (-1.0 / d.timescale).exp();
        let noise: f64 = StandardNormal.sample(&mut self.rng);
        let next = self.cfg.beta0 + (self.beta - self.cfg.beta0) * decay + d.amplitude * (1.0 - decay * decay).sqrt() * noise;
        self.beta = next.max(MIN_BETA);
    }

    /// Gauged, perturbed and clamped programming of one transform.
    fn program(&mut self, base: &IsingView, gauge: &[f64], transform: usize, events: &mut Vec<SamplerEvent>) -> Result<IsingView> {
        let conn = base.conn().clone();
        let noise_h = Normal::new(0.0, self.cfg.sigma_h).map_err(|e| Error::Sampler(e.to_string()))?;
        let noise_j = Normal::new(0.0, self.cfg.sigma_j).map_err(|e| Error::Sampler(e.to_string()))?;
        let mut clamped_h = 0;
        let mut clamped_j = 0;
        let mut h = vec![0.0; base.h.len()];
        for (i, hi) in h.iter_mut().enumerate() {
            if !conn.is_active(i) {
                continue;
            }
            let v = gauge[i] * base.h[i] + noise_h.sample(&mut self.rng);
            if v.abs() > self.cfg.range_h {
                clamped_h += 1;
            }
            *hi = v.clamp(-self.cfg.range_h, self.cfg.range_h);
        }
        let mut j = vec![0.0; base.j.len()];
        for (e, (&(l, m), je)) in conn.edges().iter().zip(j.iter_mut()).enumerate() {
            let v = gauge[l] * gauge[m] * base.j[e] + noise_j.sample(&mut self.rng);
            if v.abs() > self.cfg.range_j {
                clamped_j += 1;
            }
            *je = v.clamp(-self.cfg.range_j, self.cfg.range_j);
        }
        if clamped_h + clamped_j > 0 {
            events.push(SamplerEvent::Clamp { transform, fields: clamped_h, couplings: clamped_j });
        }
        IsingView::new(conn, h, j, self.beta)
    }

    fn sample_realized(&mut self, realized: &BmParams, reads: usize) -> Result<Array2<u8>> {
        if realized.conn().num_active() <= MAX_EXACT_UNITS {
            let dist = exact_distribution(realized)?;
            return Ok(sample_enumerated(&dist, reads, &mut self.rng));
        }
        // Linear anneal over the first half of the sweeps, then hold at the target.
        let mut bits = uniform_bits(realized, reads, &mut self.rng);
        let ramp = (self.cfg.sweeps / 2).max(1);
        for t in 0..self.cfg.sweeps {
            let frac = ((t + 1) as f64 / ramp as f64).min(1.0);
            gibbs_sweep_at(realized, frac, &mut bits, &mut self.rng)?;
        }
        Ok(bits)
    }
}

impl Sampler for EmulatorSampler {
    fn source(&self) -> SampleSource {
        SampleSource::Emulator
    }

    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch> {
        self.advance_drift();
        self.calls += 1;
        let mut events = Vec::new();
        if self.cfg.drift.amplitude > 0.0 {
            events.push(SamplerEvent::Drift { beta: self.beta });
        }
        let base = to_ising(params, 1.0)?;
        let conn = params.conn().clone();
        let nodes = params.num_nodes();
        let mut bits = Array2::zeros((n, nodes));
        let t_count = self.cfg.n_transforms.min(n.max(1));
        let mut row = 0;
        for t in 0..t_count {
            let reads = n / t_count + usize::from(t < n % t_count);
            if reads == 0 {
                continue;
            }
            let gauge: Vec<f64> = (0..nodes).map(|_| if self.rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let programmed = self.program(&base, &gauge, t, &mut events)?;
            let realized = from_ising(&programmed)?;
            let mut chunk = self.sample_realized(&realized, reads)?;
            for (i, &g) in gauge.iter().enumerate() {
                if g < 0.0 && conn.is_active(i) {
                    chunk.column_mut(i).mapv_inplace(|z| 1 - z);
                }
            }
            bits.slice_mut(s![row..row + reads, ..]).assign(&chunk);
            row += reads;
        }
        let mut batch = SampleBatch::new(bits, SampleSource::Emulator);
        batch.meta.events = events;
        Ok(batch)
    }

    fn hidden_beta(&self) -> Option<f64> {
        Some(self.beta)
    }
}
