//! Commands that read a checkpoint: `eval`, `sample`, `chain`, `ablate`.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qvae::checkpoint::{self, Checkpoint};
use qvae::data::{load_idx, Dataset};
use qvae::eval::{
    ablate_couplings, active_units, chi_square_homogeneity, class_histogram, decode_latents, gibbs_walk, image_grid, iw_bounds,
    lag_autocorrelation, log_likelihood, write_pgm, FrameUpdate, SoftmaxClassifier,
};
use qvae::math::mean;
use qvae::rbm::MAX_EXACT_UNITS;
use qvae::samplers::{EmulatorConfig, EmulatorPreset, PaConfig, SamplerSpec};
use qvae::vae::{binarize_fixed, Model};

use crate::config::RunConfig;
use crate::{dataset, print_summary, CheckpointArg, CliError, CliResult};

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    checkpoint::load(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Run config stored by `train`, if the checkpoint has one.
fn stored_run(ck: &Checkpoint) -> Option<RunConfig> {
    serde_json::from_value(ck.header.extra.get("run")?.clone()).ok()
}

fn image_side(model: &Model) -> CliResult<usize> {
    let d = model.config().x_dim;
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(CliError::Config(format!("{d} pixels do not form a square image")));
    }
    Ok(side)
}

fn default_output(ck: &Path, name: &str) -> PathBuf {
    ck.parent().unwrap_or(Path::new(".")).join(name)
}

/// Explicit images, or the held-out split of the run that wrote the checkpoint.
fn held_out(ck: &Checkpoint, images: Option<&Path>, labels: Option<&Path>) -> CliResult<Dataset> {
    if let Some(p) = images {
        return Ok(load_idx(p, labels, None)?);
    }
    let run = stored_run(ck)
        .ok_or_else(|| CliError::Config("checkpoint carries no data description; pass --images".into()))?;
    Ok(dataset::load(&run.data)?.held_out().clone())
}

fn training_split(ck: &Checkpoint, images: Option<&Path>, labels: Option<&Path>) -> CliResult<Dataset> {
    if let Some(p) = images {
        return Ok(load_idx(p, labels, None)?);
    }
    let run = stored_run(ck)
        .ok_or_else(|| CliError::Config("checkpoint carries no data description; pass --images and --labels".into()))?;
    Ok(dataset::load(&run.data)?.train)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub ck: CheckpointArg,
    /// Importance samples per example.
    #[arg(long, default_value_t = 1000)]
    pub k: usize,
    /// IDX images to evaluate on instead of the stored held-out split.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Evaluate only the first N examples.
    #[arg(long)]
    pub examples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Variance threshold for counting a latent unit as active.
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.ck.checkpoint)?;
    let data = held_out(&ck, args.images.as_deref(), None)?;
    let pa = stored_run(&ck).map_or_else(PaConfig::default, |r| r.train.log_z);
    let mut model = ck.model;
    let n = args.examples.unwrap_or(data.len()).min(data.len());
    let x = binarize_fixed(&data.images.slice(ndarray::s![..n, ..]).to_owned(), args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let ll = log_likelihood(&mut model, &x, args.k, &pa, &mut rng)?;
    let elbo = mean(&iw_bounds(&mut model, &x, 1, ll.log_z, &mut rng)?);
    let active = active_units(&mut model, &x, args.threshold, &mut rng)?;
    eprintln!("log-likelihood ({} examples, K = {}): {:.3} ± {:.3} nats", ll.examples, ll.k, ll.nats, ll.std_err);
    print_summary(&json!({
        "command": "eval",
        "checkpoint": args.ck.checkpoint,
        "iw_ll": ll.nats,
        "std_err": ll.std_err,
        "k": ll.k,
        "examples": ll.examples,
        "log_z": ll.log_z,
        "log_z_se": ll.log_z_se,
        "elbo": elbo,
        "active_units": active,
        "num_latents": model.num_latents(),
        "beta_eff": model.beta_eff,
    }));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// Exact enumeration when small enough, block Gibbs otherwise.
    Auto,
    Exact,
    Gibbs,
    Pa,
    Emulator,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    #[arg(long, value_enum, default_value_t = Backend::Auto)]
    pub backend: Backend,
    /// Gibbs sweeps before each draw.
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Emulator noise preset (low-noise, interim, baseline); ideal when absent.
    #[arg(long)]
    pub preset: Option<EmulatorPreset>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Prior draws for decoding. Classical backends sample the effective prior;
/// the emulator is handed the stored parameters and applies its own scale.
fn prior_draws(model: &Model, s: &SamplingArgs, n: usize) -> CliResult<Array2<u8>> {
    let spec = match s.backend {
        Backend::Auto if model.conn().num_active() <= MAX_EXACT_UNITS => SamplerSpec::Exact { analytic: false },
        Backend::Auto | Backend::Gibbs => SamplerSpec::Gibbs { burn_in: s.burn_in },
        Backend::Exact => SamplerSpec::Exact { analytic: false },
        Backend::Pa => SamplerSpec::Pa(PaConfig::default()),
        Backend::Emulator => SamplerSpec::Emulator(s.preset.map_or_else(EmulatorConfig::ideal, EmulatorPreset::config)),
    };
    let mut sampler = spec.build(s.seed)?;
    let batch = match spec {
        SamplerSpec::Emulator(_) => sampler.draw(&model.prior, n)?,
        _ => sampler.draw(&model.effective_prior(), n)?,
    };
    Ok(batch.bits)
}

fn write_grid(path: &Path, images: &Array2<f64>, side: usize, cols: usize) -> CliResult<()> {
    let grid = image_grid(images, side, cols.max(1))?;
    write_pgm(path, &grid).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub ck: CheckpointArg,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Images per grid row.
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
    /// Output PGM; defaults to `samples.pgm` next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

pub fn sample(args: SampleArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.ck.checkpoint)?;
    let mut model = ck.model;
    let side = image_side(&model)?;
    let z = prior_draws(&model, &args.sampling, args.n)?;
    let images = decode_latents(&mut model, &z)?;
    let out = args.out.unwrap_or_else(|| default_output(&args.ck.checkpoint, "samples.pgm"));
    write_grid(&out, &images, side, args.cols)?;
    let energies: Vec<f64> = z.outer_iter().map(|r| model.prior.energy_bits(r.as_slice().expect("row-major"))).collect();
    print_summary(&json!({
        "command": "sample",
        "out": out,
        "n": args.n,
        "backend": format!("{:?}", args.sampling.backend).to_lowercase(),
        "mean_prior_energy": if energies.is_empty() { None } else { Some(mean(&energies)) },
    }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct ChainArgs {
    #[command(flatten)]
    pub ck: CheckpointArg,
    #[arg(long, default_value_t = 8)]
    pub chains: usize,
    /// Frames after the uniform start.
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    /// Full Gibbs sweeps between frames.
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    /// Frames discarded before measuring autocorrelation.
    #[arg(long, default_value_t = 0)]
    pub skip: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn chain(args: ChainArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.ck.checkpoint)?;
    let mut model = ck.model;
    let side = image_side(&model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let walk = gibbs_walk(&model, args.chains, args.frames, FrameUpdate::Gibbs { sweeps: args.sweeps }, &mut rng)?;
    let frames = walk.latents.len();
    let mut z = Array2::zeros((args.chains * frames, model.num_latents()));
    for (f, state) in walk.latents.iter().enumerate() {
        for c in 0..args.chains {
            z.row_mut(c * frames + f).assign(&state.row(c));
        }
    }
    let images = decode_latents(&mut model, &z)?;
    let out = args.out.unwrap_or_else(|| default_output(&args.ck.checkpoint, "chain.pgm"));
    write_grid(&out, &images, side, frames)?;
    print_summary(&json!({
        "command": "chain",
        "out": out,
        "chains": args.chains,
        "frames": frames,
        "lag1_autocorrelation": lag_autocorrelation(&walk, 1, args.skip),
    }));
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub ck: CheckpointArg,
    /// Samples generated per prior.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Labelled IDX images for the classifier instead of the stored training split.
    #[arg(long, requires = "labels")]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub classifier_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub classifier_lr: f64,
    /// Directory for the two sample grids; defaults to the checkpoint's.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

pub fn ablate(args: AblateArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.ck.checkpoint)?;
    let train = training_split(&ck, args.images.as_deref(), args.labels.as_deref())?;
    let labels = train.labels.as_ref().ok_or_else(|| CliError::Config("classifier data has no labels".into()))?;
    let classes = usize::from(labels.iter().copied().max().unwrap_or(0)) + 1;
    let clf = SoftmaxClassifier::fit(&train.images, labels, classes, args.classifier_epochs, args.classifier_lr)?;
    let train_acc = clf.accuracy(&train.images, labels);

    let mut full = ck.model;
    let side = image_side(&full)?;
    let mut ablated = ablate_couplings(&full);
    let z_full = prior_draws(&full, &args.sampling, args.n)?;
    let z_abl = prior_draws(&ablated, &args.sampling, args.n)?;
    let img_full = decode_latents(&mut full, &z_full)?;
    let img_abl = decode_latents(&mut ablated, &z_abl)?;
    let h_full = class_histogram(&clf.predict(&img_full), classes);
    let h_abl = class_histogram(&clf.predict(&img_abl), classes);
    let (chi2, p) = chi_square_homogeneity(&h_full, &h_abl)?;

    let dir = args.out_dir.unwrap_or_else(|| default_output(&args.ck.checkpoint, ""));
    std::fs::create_dir_all(&dir)?;
    let show = args.n.min(64);
    let full_path = dir.join("ablate_full.pgm");
    let abl_path = dir.join("ablate_no_couplings.pgm");
    write_grid(&full_path, &img_full.slice_axis(Axis(0), (..show).into()).to_owned(), side, 8)?;
    write_grid(&abl_path, &img_abl.slice_axis(Axis(0), (..show).into()).to_owned(), side, 8)?;
    print_summary(&json!({
        "command": "ablate",
        "classes": classes,
        "classifier_train_accuracy": train_acc,
        "histogram_full": h_full,
        "histogram_no_couplings": h_abl,
        "chi_square": chi2,
        "p_value": p,
        "grids": [full_path, abl_path],
    }));
    Ok(())
}
