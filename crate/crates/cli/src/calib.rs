//! `qvae calib`: effective-temperature recovery on a random instance.

use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use qvae::calib::{recovery_trace, CalibState};
use qvae::graph::GraphSpec;
use qvae::math::pearson;
use qvae::rbm::BmParams;
use qvae::samplers::{linear_ladder, DriftConfig, EmulatorConfig, PaConfig};

use crate::{print_summary, CliError, CliResult};

#[derive(Args, Debug)]
pub struct CalibArgs {
    /// Chimera cell rows of the test instance.
    #[arg(long, default_value_t = 1)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub cols: usize,
    /// Emulator temperature the estimate should recover.
    #[arg(long, default_value_t = 0.37)]
    pub hidden_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta_init: f64,
    #[arg(long, default_value_t = 2e-2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Emulator reads per update.
    #[arg(long, default_value_t = 512)]
    pub reads: usize,
    /// Stationary spread of the hidden temperature; 0 keeps it fixed.
    #[arg(long, default_value_t = 0.0)]
    pub drift_amplitude: f64,
    /// Mean-reversion time of the drift, in updates.
    #[arg(long, default_value_t = 100.0)]
    pub drift_timescale: f64,
    /// Per-call parameter noise of the emulator.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 512)]
    pub aux_population: usize,
    #[arg(long, default_value_t = 16)]
    pub aux_steps: usize,
    #[arg(long, default_value_t = 2)]
    pub aux_sweeps: usize,
    /// Updates ignored when correlating tracked and hidden values.
    #[arg(long, default_value_t = 50)]
    pub skip: usize,
    /// Tolerance for the settling report.
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trajectory as JSON lines `{step, hidden, tracked}`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: CalibArgs) -> CliResult<()> {
    let conn = Arc::new(GraphSpec::chimera(args.rows, args.cols).build()?);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let bare = BmParams::random(conn, 1.0, 1.0, &mut rng);
    let emulator = EmulatorConfig {
        beta0: args.hidden_beta,
        drift: DriftConfig { amplitude: args.drift_amplitude, timescale: args.drift_timescale },
        sigma_h: args.sigma,
        sigma_j: args.sigma,
        ..EmulatorConfig::ideal()
    };
    let aux = PaConfig {
        population: args.aux_population,
        beta_ladder: linear_ladder(args.aux_steps),
        sweeps_per_step: args.aux_sweeps,
        ..PaConfig::default()
    };
    let mut state = CalibState::new(args.beta_init, args.gamma, args.window)?;
    let trace = recovery_trace(&bare, emulator, &mut state, args.steps, args.reads, &aux, args.seed.wrapping_add(1))?;

    if let Some(p) = &args.out {
        let lines: Vec<String> = trace
            .hidden
            .iter()
            .zip(&trace.tracked)
            .enumerate()
            .map(|(i, (h, t))| json!({ "step": i, "hidden": h, "tracked": t }).to_string() + "\n")
            .collect();
        std::fs::write(p, lines.concat()).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    let skip = args.skip.min(trace.hidden.len());
    let r = pearson(&trace.hidden[skip..], &trace.tracked[skip..]);
    print_summary(&json!({
        "command": "calib",
        "units": bare.conn().num_active(),
        "steps": args.steps,
        "final_hidden": trace.hidden.last(),
        "final_tracked": trace.tracked.last(),
        "final_abs_error": trace.hidden.last().zip(trace.tracked.last()).map(|(h, t)| (h - t).abs()),
        "settled_at": trace.settled_at(args.tol),
        "pearson": if args.drift_amplitude > 0.0 && r.is_finite() { Some(r) } else { None },
    }));
    Ok(())
}
