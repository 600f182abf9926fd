//! Measurements on trained models: importance-weighted log-likelihood,
//! active units, prior walks, generation and the coupling ablation.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, mean, sigmoid, variance};
use crate::nets::{LatentDraw, Mode};
use crate::rbm::{exact_log_z, BmParams, MAX_EXACT_UNITS};
use crate::samplers::{gibbs_sweep_at, population_annealing, uniform_bits, PaConfig, Sampler};
use crate::vae::{Model, Noise};

/// Decoder rows processed at once during evaluation.
pub const EVAL_CHUNK_ROWS: usize = 8192;

/// `(log Z, standard error)` of `params`: exact enumeration when small enough,
/// population annealing otherwise.
pub fn estimate_log_z<R: Rng + ?Sized>(params: &BmParams, pa: &PaConfig, rng: &mut R) -> Result<(f64, f64)> {
    if params.conn().num_active() <= MAX_EXACT_UNITS {
        return Ok((exact_log_z(params)?, 0.0));
    }
    let batch = population_annealing(params, pa, rng)?;
    let lz = batch.meta.log_z.ok_or_else(|| Error::Sampler("annealer returned no log Z".into()))?;
    Ok((lz, batch.meta.log_z_se.unwrap_or(0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    /// Mean `K`-sample bound in nats per example.
    pub nats: f64,
    /// Standard error combining the spread over examples and the `log Z` error.
    pub std_err: f64,
    pub k: usize,
    pub examples: usize,
    pub log_z: f64,
    pub log_z_se: f64,
}

/// Per-example `K`-sample bounds with hard latents and a fixed `log Z`.
pub fn iw_bounds<R: Rng + ?Sized>(model: &mut Model, x: &Array2<f64>, k: usize, log_z: f64, rng: &mut R) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let lw = model.hard_log_weights(x, k, log_z, EVAL_CHUNK_ROWS, rng)?;
    let ln_k = (k as f64).ln();
    Ok(lw.outer_iter().map(|row| log_sum_exp(row.as_slice().expect("standard layout")) - ln_k).collect())
}

/// Test-set log-likelihood estimate with `log Z` of the effective prior
/// estimated once and folded into every example.
pub fn log_likelihood<R: Rng + ?Sized>(
    model: &mut Model,
    x: &Array2<f64>,
    k: usize,
    pa: &PaConfig,
    rng: &mut R,
) -> Result<LogLikelihood> {
    let (log_z, log_z_se) = estimate_log_z(&model.effective_prior(), pa, rng)?;
    let per = iw_bounds(model, x, k, log_z, rng)?;
    let n = per.len();
    let spread = if n > 1 { variance(&per) / n as f64 } else { 0.0 };
    Ok(LogLikelihood { nats: mean(&per), std_err: (spread + log_z_se * log_z_se).sqrt(), k, examples: n, log_z, log_z_se })
}

/// Variance over `x` of one hard latent draw per example, per node.
pub fn unit_variances<R: Rng + ?Sized>(model: &mut Model, x: &Array2<f64>, rng: &mut R) -> Result<Vec<f64>> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let noise = Noise::draw(model, x.nrows(), rng);
    let out = model.enc.forward(x, &noise.rho1, &noise.rho2, LatentDraw::Hard, 1, Mode::Eval)?;
    let z = model.assemble(&out.values1, &out.values2);
    Ok(z.var_axis(Axis(0), 0.0).to_vec())
}

/// Units whose hard-sample variance over `x` exceeds `threshold`.
pub fn active_units<R: Rng + ?Sized>(model: &mut Model, x: &Array2<f64>, threshold: f64, rng: &mut R) -> Result<usize> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    Ok(unit_variances(model, x, rng)?.iter().filter(|&&v| v > threshold).count())
}

/// How consecutive frames of a prior walk are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrameUpdate {
    /// Full block-Gibbs sweeps (one update per color class each).
    Gibbs { sweeps: usize },
    /// Independent exact draws, the i.i.d. control.
    Exact,
}

#[derive(Clone, Debug)]
pub struct Walk {
    /// One `chains × nodes` state per frame, the uniform start first.
    pub latents: Vec<Array2<u8>>,
}

/// Runs `chains` parallel walks under the effective prior from uniform states.
pub fn gibbs_walk<R: Rng + ?Sized>(
    model: &Model,
    chains: usize,
    frames: usize,
    update: FrameUpdate,
    rng: &mut R,
) -> Result<Walk> {
    let prior = model.effective_prior();
    let mut state = uniform_bits(&prior, chains, rng);
    let mut latents = Vec::with_capacity(frames + 1);
    latents.push(state.clone());
    let dist = match update {
        FrameUpdate::Exact => Some(crate::rbm::exact_distribution(&prior)?),
        FrameUpdate::Gibbs { .. } => None,
    };
    for _ in 0..frames {
        match update {
            FrameUpdate::Gibbs { sweeps } => {
                for _ in 0..sweeps {
                    gibbs_sweep_at(&prior, 1.0, &mut state, rng)?;
                }
            }
            FrameUpdate::Exact => {
                state = crate::samplers::sample_enumerated(dist.as_ref().expect("built above"), chains, rng);
            }
        }
        latents.push(state.clone());
    }
    Ok(Walk { latents })
}

/// Lag-`lag` autocorrelation of latent units along the walk, pooled over
/// chains and frames after `skip` initial frames, averaged over units that
/// vary. Returns 0 if no unit varies.
pub fn lag_autocorrelation(walk: &Walk, lag: usize, skip: usize) -> f64 {
    let frames = &walk.latents[skip.min(walk.latents.len())..];
    if frames.len() <= lag || lag == 0 {
        return 0.0;
    }
    let nodes = frames[0].ncols();
    let mut per_unit = Vec::new();
    for j in 0..nodes {
        let all: Vec<f64> = frames.iter().flat_map(|f| f.column(j).iter().map(|&b| f64::from(b)).collect::<Vec<_>>()).collect();
        let mu = mean(&all);
        let var = all.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / all.len() as f64;
        if var < 1e-12 {
            continue;
        }
        let mut cov = 0.0;
        let mut count = 0usize;
        for t in 0..frames.len() - lag {
            for (a, b) in frames[t].column(j).iter().zip(frames[t + lag].column(j)) {
                cov += (f64::from(*a) - mu) * (f64::from(*b) - mu);
                count += 1;
            }
        }
        per_unit.push(cov / count as f64 / var);
    }
    if per_unit.is_empty() {
        0.0
    } else {
        mean(&per_unit)
    }
}

/// Pixel probabilities decoded from {0,1} latent states.
pub fn decode_latents(model: &mut Model, z: &Array2<u8>) -> Result<Array2<f64>> {
    if z.nrows() == 0 {
        return Ok(Array2::zeros((0, model.dec.out_dim())));
    }
    let logits = model.dec.forward(&z.mapv(f64::from), Mode::Eval)?;
    Ok(logits.mapv(sigmoid))
}

/// Draws `n` prior samples through `sampler`, which receives the bare
/// parameters, and decodes them.
pub fn generate(model: &mut Model, sampler: &mut dyn Sampler, n: usize) -> Result<(Array2<u8>, Array2<f64>)> {
    if n == 0 {
        let z = Array2::zeros((0, model.num_latents()));
        return Ok((z, Array2::zeros((0, model.dec.out_dim()))));
    }
    let batch = sampler.draw(&model.prior, n)?;
    let images = decode_latents(model, &batch.bits)?;
    Ok((batch.bits, images))
}

/// Copy of the model with all prior couplings set to zero.
pub fn ablate_couplings(model: &Model) -> Model {
    let mut out = model.clone();
    out.prior = model.prior.without_couplings();
    out
}

/// Multinomial logistic regression used as a measuring instrument.
#[derive(Clone, Debug)]
pub struct SoftmaxClassifier {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl SoftmaxClassifier {
    /// Full-batch gradient descent on the mean cross-entropy.
    pub fn fit(x: &Array2<f64>, labels: &[u8], classes: usize, epochs: usize, lr: f64) -> Result<Self> {
        if x.nrows() != labels.len() || x.nrows() == 0 {
            return Err(Error::Shape("classifier needs one label per example".into()));
        }
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(Error::InvalidArgument("label outside the class range".into()));
        }
        let n = x.nrows() as f64;
        let mut clf = SoftmaxClassifier { w: Array2::zeros((x.ncols(), classes)), b: Array1::zeros(classes) };
        for _ in 0..epochs {
            let mut p = clf.probabilities(x);
            for (i, &l) in labels.iter().enumerate() {
                p[[i, l as usize]] -= 1.0;
            }
            p /= n;
            clf.w -= &(x.t().dot(&p) * lr);
            clf.b -= &(p.sum_axis(Axis(0)) * lr);
        }
        Ok(clf)
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut s = x.dot(&self.w) + &self.b;
        for mut row in s.outer_iter_mut() {
            let lse = log_sum_exp(row.as_slice().expect("standard layout"));
            row.mapv_inplace(|v| (v - lse).exp());
        }
        s
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<u8> {
        self.probabilities(x)
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, labels: &[u8]) -> f64 {
        let hits = self.predict(x).iter().zip(labels).filter(|(a, b)| a == b).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

pub fn class_histogram(labels: &[u8], classes: usize) -> Vec<u64> {
    let mut h = vec![0u64; classes];
    for &l in labels {
        h[l as usize] += 1;
    }
    h
}

/// Pearson χ² test of homogeneity for two histograms over the same classes.
/// Returns `(statistic, p-value)`; empty classes are dropped.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape("histograms have different class counts".into()));
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("empty histogram".into()));
    }
    let total = na + nb;
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        used += 1;
        let (ea, eb) = (na * col / total, nb * col / total);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if used < 2 {
        return Ok((0.0, 1.0));
    }
    let dist = ChiSquared::new((used - 1) as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// Tiles square images (one per row, values in [0,1]) into a grid.
pub fn image_grid(images: &Array2<f64>, side: usize, cols: usize) -> Result<Array2<f64>> {
    if images.ncols() != side * side || cols == 0 {
        return Err(Error::Shape(format!("images of {} pixels are not {side}×{side}", images.ncols())));
    }
    let n = images.nrows();
    let rows = n.div_ceil(cols).max(1);
    let mut grid = Array2::zeros((rows * side, cols * side));
    for (i, img) in images.outer_iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        for p in 0..side * side {
            grid[[gr * side + p / side, gc * side + p % side]] = img[p];
        }
    }
    Ok(grid)
}

/// Binary (P5) 8-bit PGM.
pub fn write_pgm(path: &Path, grid: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", grid.ncols(), grid.nrows())?;
    let bytes: Vec<u8> = grid.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}
