use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rbm::{exact_distribution, exact_moments, BmParams, ExactDistribution};

use super::{NegativePhase, SampleBatch, SampleSource, Sampler};

/// Inverse-CDF sampling from a fully enumerated distribution.
pub(crate) fn sample_enumerated<R: Rng + ?Sized>(dist: &ExactDistribution, n: usize, rng: &mut R) -> Array2<u8> {
    let mut cdf = Vec::with_capacity(dist.num_states());
    let mut acc = 0.0;
    for p in dist.probs() {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut bits = Array2::zeros((n, dist.num_nodes));
    for mut row in bits.outer_iter_mut() {
        let u = rng.random::<f64>() * total;
        let s = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        dist.write_state(s, row.as_slice_mut().expect("standard layout"));
    }
    bits
}

/// Reference backend by enumeration (at most 20 active units).
pub struct ExactSampler {
    analytic: bool,
    rng: ChaCha8Rng,
}

impl ExactSampler {
    pub fn new(seed: u64) -> Self {
        ExactSampler { analytic: false, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// When set, the negative phase returns exact moments instead of sample
    /// averages.
    pub fn analytic(mut self, on: bool) -> Self {
        self.analytic = on;
        self
    }
}

impl Sampler for ExactSampler {
    fn source(&self) -> SampleSource {
        SampleSource::Exact
    }

    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch> {
        let dist = exact_distribution(params)?;
        let mut batch = SampleBatch::new(sample_enumerated(&dist, n, &mut self.rng), SampleSource::Exact);
        batch.meta.log_z = Some(dist.log_z);
        batch.meta.log_z_se = Some(0.0);
        Ok(batch)
    }

    fn negative_phase(&mut self, params: &BmParams, n: usize) -> Result<NegativePhase> {
        if self.analytic {
            let (mean, corr) = exact_moments(params)?;
            return Ok(NegativePhase { mean, corr, batch: None });
        }
        let batch = self.draw(params, n)?;
        let (mean, corr) = batch.moments(params)?;
        Ok(NegativePhase { mean, corr, batch: Some(batch) })
    }
}
