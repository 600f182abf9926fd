//! `qvae train`.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Args;
use serde_json::json;

use qvae::checkpoint;
use qvae::metrics::MetricsWriter;
use qvae::vae::{binarize_fixed, Model, Trainer};

use crate::config::{run_dir, RunConfig};
use crate::{dataset, print_summary, CliError, CliResult};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.dir` and `$QVAE_OUT_DIR`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Suppress the config echo and per-epoch progress.
    #[arg(long)]
    pub quiet: bool,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn run(args: TrainArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let canonical = cfg.canonical();
    if !args.quiet {
        eprintln!("# effective configuration\n{canonical}");
    }
    let dir = run_dir(args.out.as_deref(), &cfg, &args.config);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("config.toml"), &canonical)?;

    let splits = dataset::load(&cfg.data)?;
    std::fs::write(dir.join("split.json"), splits.manifest.to_json()?)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(CliError::Config("data split leaves no training or validation examples".into()));
    }
    if splits.train.images.ncols() != cfg.model.x_dim {
        return Err(CliError::Config(format!(
            "key 'model.x_dim': {} does not match the data's {} pixels",
            cfg.model.x_dim,
            splits.train.images.ncols()
        )));
    }
    let val = binarize_fixed(&splits.val.images, cfg.train.seed)?;

    let ck_path = dir.join(CHECKPOINT_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let mut trainer = match &args.resume {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            if ck.header.model != cfg.model {
                return Err(CliError::Config(format!("checkpoint {} was written for a different model section", p.display())));
            }
            Trainer::resume(cfg.train.clone(), ck.into_state()?, &cfg.sampler)?
        }
        None => Trainer::new(cfg.train.clone(), Model::new(cfg.model.clone(), cfg.train.seed)?, &cfg.sampler)?,
    };
    let mut writer = MetricsWriter::create(&metrics_path, args.resume.is_some())?;

    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let flag = interrupted.clone();
        // A second registration in the same process is harmless to ignore.
        let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
    }
    let extra = json!({ "run": serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))? });
    let every = cfg.output.checkpoint_every;
    let quiet = args.quiet;
    let total = cfg.train.epochs;

    let outcome = trainer.run_with(
        &splits.train.images,
        &val,
        &mut |rec| {
            if !quiet {
                eprintln!(
                    "epoch {:>4}  step {:>7}  iw_ll {}  active {}  |W|₁ {:.3}  β {:.4}",
                    rec.epoch,
                    rec.step,
                    rec.iw_ll.map_or("-".into(), |v| format!("{v:.3}")),
                    rec.active_units.map_or("-".into(), |v| v.to_string()),
                    rec.w_l1,
                    rec.beta_eff
                );
            }
            writer.write(rec)
        },
        &mut |state| {
            let stop = interrupted.load(Ordering::SeqCst);
            let due = every > 0 && state.epoch % every == 0 && state.epoch < total;
            if stop || due {
                checkpoint::save_state(&ck_path, state, extra.clone())?;
            }
            if stop {
                eprintln!("interrupted after epoch {}; checkpoint written", state.epoch);
            }
            Ok(!stop)
        },
    )?;
    checkpoint::save_state(&ck_path, &mut trainer.state, extra)?;

    let summary = json!({
        "command": "train",
        "out_dir": dir,
        "checkpoint": ck_path,
        "metrics": metrics_path,
        "epochs": trainer.state.epoch,
        "steps": trainer.state.step,
        "interrupted": interrupted.load(Ordering::SeqCst),
        "diverged": outcome.diverged,
        "final": outcome.records.last(),
    });
    print_summary(&summary);
    match outcome.diverged {
        Some(reason) => Err(CliError::Divergence(reason)),
        None => Ok(()),
    }
}
