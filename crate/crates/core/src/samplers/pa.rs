//! Population annealing with a running partition-function estimate.

use std::f64::consts::LN_2;

use ndarray::Axis;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, variance};
use crate::rbm::BmParams;

use super::{gibbs_sweep_at, uniform_bits, SampleBatch, SampleSource, Sampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    Multinomial,
    Systematic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_ladder")]
    pub beta_ladder: Vec<f64>,
    #[serde(default = "default_sweeps")]
    pub sweeps_per_step: usize,
    #[serde(default = "default_resample")]
    pub resample: Resample,
    /// Bootstrap replicates for the standard error; 0 disables it.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_population() -> usize {
    1024
}
fn default_ladder() -> Vec<f64> {
    linear_ladder(64)
}
fn default_sweeps() -> usize {
    5
}
fn default_resample() -> Resample {
    Resample::Systematic
}
fn default_bootstrap() -> usize {
    200
}

impl Default for PaConfig {
    fn default() -> Self {
        PaConfig {
            population: default_population(),
            beta_ladder: default_ladder(),
            sweeps_per_step: default_sweeps(),
            resample: default_resample(),
            bootstrap: default_bootstrap(),
        }
    }
}

/// `steps + 1` evenly spaced inverse temperatures from 0 to 1.
pub fn linear_ladder(steps: usize) -> Vec<f64> {
    (0..=steps).map(|t| t as f64 / steps.max(1) as f64).collect()
}

impl PaConfig {
    pub fn with_steps(steps: usize) -> Self {
        PaConfig { beta_ladder: linear_ladder(steps), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.beta_ladder;
        if l.len() < 2 {
            return Err(Error::Ladder("needs at least two temperatures".into()));
        }
        if l[0] != 0.0 || l[l.len() - 1] != 1.0 {
            return Err(Error::Ladder("must start at 0 and end at 1".into()));
        }
        if l.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Ladder("must be strictly increasing".into()));
        }
        if self.population < 2 {
            return Err(Error::InvalidArgument("population must be at least 2".into()));
        }
        Ok(())
    }
}

fn resample_indices<R: Rng + ?Sized>(w: &[f64], kind: Resample, rng: &mut R) -> Vec<usize> {
    let n = w.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &x in w {
        acc += x;
        cdf.push(acc);
    }
    let pick = |u: f64| cdf.partition_point(|&c| c <= u * acc).min(n - 1);
    match kind {
        Resample::Systematic => {
            let u0: f64 = rng.random();
            (0..n).map(|i| pick((i as f64 + u0) / n as f64)).collect()
        }
        Resample::Multinomial => (0..n).map(|_| pick(rng.random())).collect(),
    }
}

/// Runs the annealer from `β = 0` to `β = 1`. The returned population carries
/// the `log Z` estimate and its bootstrap standard error in `meta`.
pub fn population_annealing<R: Rng + ?Sized>(params: &BmParams, cfg: &PaConfig, rng: &mut R) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = cfg.population;
    let ln_n = (n as f64).ln();
    let mut pop = uniform_bits(params, n, rng);
    let mut log_z = params.conn().num_active() as f64 * LN_2;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut logw = vec![0.0; n];
    for (step, pair) in cfg.beta_ladder.windows(2).enumerate() {
        let dbeta = pair[1] - pair[0];
        for (lw, row) in logw.iter_mut().zip(pop.outer_iter()) {
            *lw = -dbeta * params.energy_bits(row.as_slice().expect("standard layout"));
        }
        let lse = log_sum_exp(&logw);
        if !lse.is_finite() {
            return Err(Error::NonFinite(format!("annealing weights at step {}", step + 1)));
        }
        log_z += lse - ln_n;
        let w: Vec<f64> = logw.iter().map(|x| (x - lse).exp()).collect();
        let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
        if ess < 2.0 {
            return Err(Error::PopulationCollapse { step: step + 1, ess });
        }
        if cfg.bootstrap > 0 {
            history.push(logw.clone());
        }
        let idx = resample_indices(&w, cfg.resample, rng);
        pop = pop.select(Axis(0), &idx);
        for _ in 0..cfg.sweeps_per_step {
            gibbs_sweep_at(params, pair[1], &mut pop, rng)?;
        }
    }
    let se = (cfg.bootstrap > 0).then(|| bootstrap_se(&history, cfg.bootstrap, rng));
    let mut batch = SampleBatch::new(pop, SampleSource::Pa);
    batch.meta.log_z = Some(log_z);
    batch.meta.log_z_se = se;
    Ok(batch)
}

/// Standard error of `Σ_t log mean(w_t)` by resampling each step's weights.
fn bootstrap_se<R: Rng + ?Sized>(history: &[Vec<f64>], reps: usize, rng: &mut R) -> f64 {
    let mut buf = Vec::new();
    let estimates: Vec<f64> = (0..reps)
        .map(|_| {
            history
                .iter()
                .map(|lw| {
                    let n = lw.len();
                    buf.clear();
                    buf.extend((0..n).map(|_| lw[rng.random_range(0..n)]));
                    log_sum_exp(&buf) - (n as f64).ln()
                })
                .sum()
        })
        .collect();
    variance(&estimates).sqrt()
}

pub struct PaSampler {
    cfg: PaConfig,
    rng: ChaCha8Rng,
}

impl PaSampler {
    pub fn new(cfg: PaConfig, seed: u64) -> Self {
        PaSampler { cfg, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Sampler for PaSampler {
    fn source(&self) -> SampleSource {
        SampleSource::Pa
    }

    /// Anneals a population of at least `n` and returns a uniform subset.
    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch> {
        let cfg = PaConfig { population: self.cfg.population.max(n), ..self.cfg.clone() };
        let mut batch = population_annealing(params, &cfg, &mut self.rng)?;
        let keep = sample_indices(&mut self.rng, cfg.population, n).into_vec();
        batch.bits = batch.bits.select(Axis(0), &keep);
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_bernoulli, build_chimera};
    use crate::math::softplus;
    use crate::rbm::exact_log_z;
    use std::sync::Arc;

    fn estimate(p: &BmParams, cfg: &PaConfig, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = population_annealing(p, cfg, &mut rng).unwrap();
        (b.meta.log_z.unwrap(), b.meta.log_z_se.unwrap())
    }

    #[test]
    fn ladder_validation() {
        assert!(PaConfig { beta_ladder: vec![0.0], ..Default::default() }.validate().is_err());
        assert!(PaConfig { beta_ladder: vec![0.1, 1.0], ..Default::default() }.validate().is_err());
        assert!(PaConfig { beta_ladder: vec![0.0, 0.5, 0.5, 1.0], ..Default::default() }.validate().is_err());
        assert!(PaConfig { population: 1, ..Default::default() }.validate().is_err());
        assert!(PaConfig::default().validate().is_ok());
        assert_eq!(linear_ladder(4), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn independent_units_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let p = BmParams::random(Arc::new(build_bernoulli(30).unwrap()), 2.0, 0.0, &mut rng);
        let closed: f64 = p.b.iter().map(|&b| softplus(-b)).sum();
        let (lz, se) = estimate(&p, &PaConfig::default(), 1);
        assert!((lz - closed).abs() < 3.0 * se.max(1e-3), "{lz} vs {closed} (se {se})");
    }

    #[test]
    fn sixteen_units_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let p = BmParams::random(Arc::new(build_chimera(1, 2, 4).unwrap()), 1.0, 1.0, &mut rng);
        let exact = exact_log_z(&p).unwrap();
        let (lz, se) = estimate(&p, &PaConfig::default(), 2);
        assert!((lz - exact).abs() < 3.0 * se, "{lz} vs {exact} (se {se})");
    }

    #[test]
    fn single_step_is_importance_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let p = BmParams::random(Arc::new(build_chimera(1, 2, 4).unwrap()), 1.0, 1.0, &mut rng);
        let exact = exact_log_z(&p).unwrap();
        let cfg = PaConfig { population: 200_000, beta_ladder: vec![0.0, 1.0], sweeps_per_step: 0, ..Default::default() };
        let (lz, se) = estimate(&p, &cfg, 3);
        assert!((lz - exact).abs() < 3.0 * se, "{lz} vs {exact} (se {se})");
    }

    #[test]
    fn collapse_is_reported() {
        // A huge field makes one configuration dominate at the first step.
        let p = BmParams::new(Arc::new(build_bernoulli(40).unwrap()), vec![-200.0; 40], vec![]).unwrap();
        let cfg = PaConfig { population: 16, beta_ladder: vec![0.0, 1.0], ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(population_annealing(&p, &cfg, &mut rng), Err(Error::PopulationCollapse { .. })));
    }
}
