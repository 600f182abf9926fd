use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rbm::BmParams;

use super::{uniform_bits, SampleBatch, SampleSource, Sampler};

fn check_shape(params: &BmParams, bits: &Array2<u8>) -> Result<()> {
    if bits.ncols() != params.num_nodes() {
        return Err(Error::Shape(format!(
            "state has {} columns, graph has {} nodes",
            bits.ncols(),
            params.num_nodes()
        )));
    }
    Ok(())
}

/// One sweep over all color classes of `params` at inverse temperature
/// `beta`, in place. Units of a class are conditionally independent given the
/// others, so updating them in turn is a block update.
pub fn gibbs_sweep_at<R: Rng + ?Sized>(params: &BmParams, beta: f64, bits: &mut Array2<u8>, rng: &mut R) -> Result<()> {
    check_shape(params, bits)?;
    let classes = params.conn().color_classes();
    for mut row in bits.outer_iter_mut() {
        let z = row.as_slice_mut().expect("standard layout");
        for class in classes {
            for &node in class {
                let p_on = sigmoid(-beta * params.local_field(z, node));
                z[node] = (rng.random::<f64>() < p_on) as u8;
            }
        }
    }
    Ok(())
}

pub fn block_gibbs_sweep<R: Rng + ?Sized>(params: &BmParams, state: &mut SampleBatch, rng: &mut R) -> Result<()> {
    gibbs_sweep_at(params, 1.0, &mut state.bits, rng)
}

/// Applies `k` sweeps to persistent chains and returns a copy of them.
pub fn pcd_draw<R: Rng + ?Sized>(params: &BmParams, persistent: &mut SampleBatch, k: usize, rng: &mut R) -> Result<SampleBatch> {
    check_shape(params, &persistent.bits)?;
    for _ in 0..k {
        gibbs_sweep_at(params, 1.0, &mut persistent.bits, rng)?;
    }
    Ok(SampleBatch::new(persistent.bits.clone(), SampleSource::Pcd))
}

/// Fresh chains from uniform states, `burn_in` sweeps each.
pub struct GibbsSampler {
    burn_in: usize,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    pub fn new(burn_in: usize, seed: u64) -> Self {
        GibbsSampler { burn_in, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Sampler for GibbsSampler {
    fn source(&self) -> SampleSource {
        SampleSource::Gibbs
    }

    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch> {
        let mut bits = uniform_bits(params, n, &mut self.rng);
        for _ in 0..self.burn_in {
            gibbs_sweep_at(params, 1.0, &mut bits, &mut self.rng)?;
        }
        Ok(SampleBatch::new(bits, SampleSource::Gibbs))
    }
}

/// Persistent chains carried across calls; reinitialized when `n` or the
/// graph changes.
pub struct PcdSampler {
    sweeps: usize,
    chains: Option<SampleBatch>,
    rng: ChaCha8Rng,
}

impl PcdSampler {
    pub fn new(sweeps: usize, seed: u64) -> Self {
        PcdSampler { sweeps, chains: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn chains(&self) -> Option<&SampleBatch> {
        self.chains.as_ref()
    }
}

impl Sampler for PcdSampler {
    fn source(&self) -> SampleSource {
        SampleSource::Pcd
    }

    fn draw(&mut self, params: &BmParams, n: usize) -> Result<SampleBatch> {
        let fresh = match &self.chains {
            Some(c) => c.bits.nrows() != n || c.bits.ncols() != params.num_nodes(),
            None => true,
        };
        if fresh {
            let bits = uniform_bits(params, n, &mut self.rng);
            self.chains = Some(SampleBatch::new(bits, SampleSource::Pcd));
        }
        let chains = self.chains.as_mut().expect("initialized above");
        pcd_draw(params, chains, self.sweeps, &mut self.rng)
    }
}
