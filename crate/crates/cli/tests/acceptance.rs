//! Acceptance criteria, one test per criterion, each printing a single
//! `[PASS]` / `[FAIL]` line with the measured quantity.
//!
//! Criteria 7 to 12 train 288-unit models on a 10k-digit MNIST subset and are
//! ignored by default; run them with
//! `cargo test --release -p qvae-cli --test acceptance -- --include-ignored`.
//! They expect `data/mnist10k-{images,labels}.idx` (see
//! `scripts/mnist_npm_to_idx.py`) and cache finished runs under the cargo
//! target directory, so a rerun only recomputes what changed.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use qvae::calib::{recovery_trace, CalibState};
use qvae::data::{load_idx, synth_bars_stripes, SplitManifest};
use qvae::eval::{estimate_log_z, gibbs_walk, iw_bounds, lag_autocorrelation, FrameUpdate, LogLikelihood};
use qvae::graph::{build_chimera, GraphKind, GraphSpec, HierarchyScheme};
use qvae::math::{log_sum_exp, mean, pearson, softplus, variance};
use qvae::metrics::MetricRecord;
use qvae::nets::{LatentDraw, Mode};
use qvae::rbm::{exact_log_z, exact_moments, from_ising, qbm_exact, to_ising, BmParams, QbmConfig};
use qvae::samplers::{
    gibbs_sweep_at, linear_ladder, population_annealing, DriftConfig, EmulatorConfig, EmulatorPreset, EmulatorSampler,
    NegativePhase, PaConfig, Sampler, SamplerSpec,
};
use qvae::vae::{binarize_fixed, ArchConfig, KdStage, Model, ModelConfig, Noise, ObjectiveSpec, TrainConfig, Trainer};

fn report(id: u32, name: &str, pass: bool, detail: &str, started: Instant) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] {id:02} {name}: {detail} ({:.1} s)", started.elapsed().as_secs_f64());
    // Written past the test harness capture so the line shows on every run.
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn sixteen_unit_chimera() -> Arc<qvae::graph::Connectivity> {
    Arc::new(build_chimera(1, 2, 4).unwrap())
}

/// Spin-convention instance with fields and couplings uniform in [-1, 1].
fn spin_instance(seed: u64) -> BmParams {
    let conn = sixteen_unit_chimera();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut view = to_ising(&BmParams::zeros(conn), 1.0).unwrap();
    view.h.iter_mut().for_each(|h| *h = rng.random_range(-1.0..=1.0));
    view.j.iter_mut().for_each(|j| *j = rng.random_range(-1.0..=1.0));
    from_ising(&view).unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn fd_model() -> Model {
    let cfg = ModelConfig {
        x_dim: 10,
        graph: GraphSpec::chimera(1, 2),
        hierarchy: HierarchyScheme::Bipartite,
        arch: ArchConfig { trunk: vec![12], head_hidden: 10, decoder: vec![12], decoder_dropout: 0.2, batchnorm: true },
    };
    let mut m = Model::new(cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    m.prior = BmParams::random(m.conn().clone(), 0.5, 0.5, &mut rng);
    m.visit_buffers(&mut |_, v| v.iter_mut().for_each(|x| *x = rng.random_range(0.5..1.5)));
    // Zero-initialised biases can leave a ReLU exactly at its kink; jitter to a generic point.
    m.visit_params(&mut |_, v, _| v.iter_mut().for_each(|x| *x += rng.random_range(-0.1..0.1)));
    m.freeze_batchnorm(true);
    m
}

/// Objective value with the exact `log Z` of the effective prior folded in,
/// so that it is a complete function of every parameter.
fn full_objective(m: &mut Model, x: &Array2<f64>, noise: &Noise, spec: &ObjectiveSpec) -> f64 {
    let log_z = exact_log_z(&m.effective_prior()).unwrap();
    m.dec.reseed_dropout(99);
    let spec = ObjectiveSpec { log_z: Some(log_z), ..*spec };
    m.objective(x, noise, &spec, None, Mode::Train, false).unwrap().value
}

fn max_gradient_error(beta: f64, spec: ObjectiveSpec) -> (f64, usize, String) {
    let mut m = fd_model();
    m.beta_eff = beta;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = Array2::from_shape_fn((4, 10), |_| f64::from(rng.random::<bool>()));
    let noise = Noise::draw(&m, 4 * spec.replicas(), &mut rng);
    let (mean_stats, corr) = exact_moments(&m.effective_prior()).unwrap();
    let neg = NegativePhase { mean: mean_stats, corr, batch: None };
    m.zero_grad();
    m.dec.reseed_dropout(99);
    m.objective(&x, &noise, &spec, Some(&neg), Mode::Train, true).unwrap();
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    m.visit_params(&mut |name, _, g| analytic.push((name.to_string(), g.iter().map(|v| -v).collect())));

    let h = 1e-5;
    let mut worst = (0.0f64, 0usize, String::new());
    let mut count = 0;
    for (t, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let bump = |m: &mut Model, delta: f64| {
                let mut idx = 0;
                m.visit_params(&mut |_, v, _| {
                    if idx == t {
                        v[i] += delta;
                    }
                    idx += 1;
                });
            };
            bump(&mut m, h);
            let up = full_objective(&mut m, &x, &noise, &spec);
            bump(&mut m, -2.0 * h);
            let dn = full_objective(&mut m, &x, &noise, &spec);
            bump(&mut m, h);
            let numeric = (up - dn) / (2.0 * h);
            // Gradients below 1e-6 in size are compared on an absolute scale.
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, count, format!("{name}[{i}]"));
            }
            count += 1;
        }
    }
    (worst.0, count, worst.2)
}

#[test]
fn c01_gradient_exactness() {
    let t = Instant::now();
    let elbo = max_gradient_error(1.0, ObjectiveSpec::elbo(1.0, 0.5));
    let iw = max_gradient_error(
        0.8,
        ObjectiveSpec { k: 2, d: 2, kl_weight: 0.6, draw: LatentDraw::Smooth { tau: 0.5 }, log_z: None },
    );
    let pass = elbo.0 < 1e-4 && iw.0 < 1e-4 && t.elapsed().as_secs() < 60;
    report(
        1,
        "gradient exactness",
        pass,
        &format!(
            "{} parameters; max rel err {:.2e} (ELBO, worst {}) and {:.2e} (K=2 D=2, beta 0.8, worst {}), limit 1e-4",
            elbo.1, elbo.0, elbo.2, iw.0, iw.2
        ),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c02_partition_function_oracle() {
    let t = Instant::now();
    let cfg = PaConfig { population: 4096, ..PaConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_gap: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    for seed in 0..5 {
        let p = spin_instance(200 + seed);
        let exact = exact_log_z(&p).unwrap();
        let batch = population_annealing(&p, &cfg, &mut rng).unwrap();
        let est = batch.meta.log_z.unwrap();
        let se = batch.meta.log_z_se.unwrap();
        let gap = (est - exact).abs();
        worst_gap = worst_gap.max(gap);
        worst_sigma = worst_sigma.max(gap / se);
    }
    let pass = worst_gap < 0.05 && worst_sigma <= 3.0 && t.elapsed().as_secs() < 120;
    report(
        2,
        "population annealing log Z",
        pass,
        &format!("5 instances; max |gap| {worst_gap:.4} nats (limit 0.05), max gap/SE {worst_sigma:.2} (limit 3)"),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn max_moment_error(p: &BmParams, mean_est: &[f64], corr_est: &[f64]) -> f64 {
    let (m, c) = exact_moments(p).unwrap();
    m.iter().zip(mean_est).chain(c.iter().zip(corr_est)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn c03_sampler_moments() {
    let t = Instant::now();
    let mut worst_gibbs: f64 = 0.0;
    let mut worst_emu: f64 = 0.0;
    for seed in 0..3 {
        let p = spin_instance(300 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
        let chains = 64;
        let mut state = Array2::from_shape_fn((chains, 16), |_| u8::from(rng.random::<bool>()));
        for _ in 0..200 {
            gibbs_sweep_at(&p, 1.0, &mut state, &mut rng).unwrap();
        }
        let mut m = vec![0.0; p.num_nodes()];
        let mut c = vec![0.0; p.num_edges()];
        let sweeps = 10_000;
        let weights = vec![1.0; chains];
        for _ in 0..sweeps {
            gibbs_sweep_at(&p, 1.0, &mut state, &mut rng).unwrap();
            let (sm, sc) = p.weighted_stats(&state.mapv(f64::from).view(), &weights);
            m.iter_mut().zip(sm).for_each(|(a, b)| *a += b);
            c.iter_mut().zip(sc).for_each(|(a, b)| *a += b);
        }
        let norm = 1.0 / (sweeps * chains) as f64;
        m.iter_mut().chain(c.iter_mut()).for_each(|v| *v *= norm);
        worst_gibbs = worst_gibbs.max(max_moment_error(&p, &m, &c));

        let mut emu = EmulatorSampler::new(EmulatorConfig::ideal(), 40 + seed).unwrap();
        let batch = emu.draw(&p, 100_000).unwrap();
        let (em, ec) = batch.moments(&p).unwrap();
        worst_emu = worst_emu.max(max_moment_error(&p, &em, &ec));
    }
    let pass = worst_gibbs < 0.01 && worst_emu < 0.01 && t.elapsed().as_secs() < 120;
    report(
        3,
        "sampler moments",
        pass,
        &format!("3 instances; max abs error block Gibbs {worst_gibbs:.4}, zero-noise emulator {worst_emu:.4} (limit 0.01)"),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

/// Exact `log p(x)` per row of `x` by summing over all latent states.
fn exact_log_px(m: &mut Model, x: &Array2<f64>) -> Vec<f64> {
    let n = m.num_latents();
    let states = 1usize << n;
    let z = Array2::from_shape_fn((states, n), |(code, j)| ((code >> j) & 1) as f64);
    let prior = m.effective_prior();
    let log_z = exact_log_z(&prior).unwrap();
    let (energies, _) = prior.energies_and_input_grads(&z.view());
    let logits = m.dec.forward(&z, Mode::Eval).unwrap();
    let base: Vec<f64> = (0..states).map(|c| -energies[c] - log_z - logits.row(c).iter().map(|&l| softplus(l)).sum::<f64>()).collect();
    x.outer_iter()
        .map(|row| {
            let terms: Vec<f64> = (0..states).map(|c| base[c] + logits.row(c).dot(&row)).collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// Mean `K`-sample bound over `x` and its Monte Carlo standard error, from
/// `reps` independent replicates per example.
fn bound(m: &mut Model, x: &Array2<f64>, k: usize, reps: usize, log_z: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = x.nrows();
    let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, reps)).collect();
    let xr = x.select(ndarray::Axis(0), &idx);
    let per = iw_bounds(m, &xr, k, log_z, rng).unwrap();
    let mut var_sum = 0.0;
    for i in 0..n {
        let chunk = &per[i * reps..(i + 1) * reps];
        var_sum += if reps > 1 { variance(chunk) / reps as f64 } else { 0.0 };
    }
    (mean(&per), var_sum.sqrt() / n as f64)
}

#[test]
fn c04_bound_ordering() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let data = synth_bars_stripes(3, 1000, &mut rng).unwrap();
    let cfg = ModelConfig {
        x_dim: 9,
        graph: GraphSpec::chimera(1, 2),
        hierarchy: HierarchyScheme::Bipartite,
        arch: ArchConfig { trunk: vec![32], head_hidden: 16, decoder: vec![32], decoder_dropout: 0.0, batchnorm: true },
    };
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 50,
        kl_ramp_epochs: 5,
        lr_decay_epochs: 30,
        kd_schedule: vec![KdStage { k: 8, d: 1, epoch: 0 }],
        neg_samples: 1,
        metrics_every: 0,
        eval_examples: 0,
        seed: 41,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(tc, Model::new(cfg, 41).unwrap(), &SamplerSpec::Exact { analytic: true }).unwrap();
    for _ in 0..30 {
        trainer.train_epoch(&data).unwrap();
    }
    let mut m = trainer.state.model.clone();
    let x = synth_bars_stripes(3, 20, &mut rng).unwrap();
    let exact = mean(&exact_log_px(&mut m, &x));
    let log_z = exact_log_z(&m.effective_prior()).unwrap();
    let (l1, s1) = bound(&mut m, &x, 1, 2000, log_z, &mut rng);
    let (l5, s5) = bound(&mut m, &x, 5, 400, log_z, &mut rng);
    let (l50, s50) = bound(&mut m, &x, 50, 40, log_z, &mut rng);
    let (l10k, s10k) = bound(&mut m, &x, 10_000, 1, log_z, &mut rng);
    let le = |a: f64, sa: f64, b: f64, sb: f64| a <= b + 3.0 * (sa * sa + sb * sb).sqrt();
    let ordered = le(l1, s1, l5, s5) && le(l5, s5, l50, s50) && le(l50, s50, exact, 0.0);
    let close = (l10k - exact).abs() < 0.01;
    let pass = ordered && close && t.elapsed().as_secs() < 300;
    report(
        4,
        "bound ordering",
        pass,
        &format!(
            "ELBO {l1:.4}±{s1:.4} <= L5 {l5:.4}±{s5:.4} <= L50 {l50:.4}±{s50:.4} <= exact {exact:.4}; \
             |L10000 - exact| = {:.4} (limit 0.01, MC se {s10k:.4})",
            (l10k - exact).abs()
        ),
        t,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn c05_golden_thompson() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut min_slack = f64::INFINITY;
    let mut cases = 0;
    for n in [2usize, 4, 8] {
        for gamma in [0.25, 0.5, 1.0] {
            for _ in 0..5 {
                let conn = Arc::new(qvae::graph::build_complete(n).unwrap());
                let p = BmParams::random(conn, 1.0, 1.0, &mut rng);
                let q = qbm_exact(&p, &QbmConfig { gamma, ..QbmConfig::default() }).unwrap();
                for (a, b) in q.quantum.iter().zip(&q.classical_proxy) {
                    min_slack = min_slack.min(a - b);
                }
                cases += 1;
            }
        }
    }
    let pass = min_slack >= -1e-12 && t.elapsed().as_secs() < 60;
    report(5, "Golden-Thompson bound", pass, &format!("{cases} random QBMs; min slack {min_slack:.3e} (limit -1e-12)"), t);
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn c06_beta_recovery() {
    let t = Instant::now();
    let bare = BmParams::random(sixteen_unit_chimera(), 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(60));
    let aux = PaConfig { population: 512, beta_ladder: linear_ladder(16), sweeps_per_step: 2, ..PaConfig::default() };
    let fixed = EmulatorConfig { beta0: 0.37, ..EmulatorConfig::ideal() };
    let mut st = CalibState::new(1.0, 2e-2, 5).unwrap();
    let trace = recovery_trace(&bare, fixed.clone(), &mut st, 500, 512, &aux, 61).unwrap();
    let final_err = (st.beta_eff() - 0.37).abs();
    let settled = trace.settled_at(0.02);

    let drifting = EmulatorConfig { drift: DriftConfig { amplitude: 0.1, timescale: 200.0 }, ..fixed };
    let mut st = CalibState::new(0.37, 2e-2, 5).unwrap();
    let trace = recovery_trace(&bare, drifting, &mut st, 1000, 512, &aux, 62).unwrap();
    let r = pearson(&trace.hidden[50..], &trace.tracked[50..]);

    let pass = final_err < 0.02 && settled.is_some() && r > 0.8 && t.elapsed().as_secs() < 300;
    report(
        6,
        "effective temperature recovery",
        pass,
        &format!(
            "fixed 0.37: final {:.4} (|err| {final_err:.4}, within 0.02 from update {settled:?} of 500); drift: Pearson r {r:.3} (limit 0.8)",
            0.37 + final_err.copysign(st.beta_eff() - 0.37)
        ),
        t,
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 13

const REPRO_CONFIG: &str = r#"
[data]
source = "bars-stripes"
side = 3
examples = 400
n_val = 100

[model]
x_dim = 9
graph = { kind = "chimera", rows = 1, cols = 2 }
arch = { trunk = [16], head_hidden = 8, decoder = [16] }

[train]
epochs = 4
batch_size = 50
kl_ramp_epochs = 2
metrics_every = 1
neg_samples = 200
eval_examples = 100
eval_k = 20

[sampler]
backend = "exact"
"#;

fn qvae_cmd(args: &[&str], extra: &[&Path]) -> std::process::Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qvae"));
    c.args(args);
    for p in extra {
        c.arg(p);
    }
    c.output().unwrap()
}

fn json_without(out: &[u8], key: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(out).unwrap();
    v.as_object_mut().unwrap().remove(key);
    v
}

#[test]
fn c13_reproducibility() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("repro.toml");
    std::fs::write(&cfg, REPRO_CONFIG).unwrap();
    let mut checks = Vec::new();
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for r in &runs {
        let out = qvae_cmd(&["train", "--quiet", "--config"], &[&cfg, Path::new("--out"), r]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |p: &Path| std::fs::read(p).unwrap();
    checks.push(("metrics stream", read(&runs[0].join("metrics.jsonl")) == read(&runs[1].join("metrics.jsonl"))));
    checks.push(("checkpoint", read(&runs[0].join("checkpoint.bin")) == read(&runs[1].join("checkpoint.bin"))));

    let mut evals = Vec::new();
    let mut grids = Vec::new();
    for r in &runs {
        let ck = r.join("checkpoint.bin");
        let out = qvae_cmd(&["eval", "--k", "50", "--checkpoint"], &[&ck]);
        evals.push(json_without(&out.stdout, "checkpoint"));
        let png = r.join("s.pgm");
        qvae_cmd(&["sample", "--n", "16", "--checkpoint"], &[&ck, Path::new("--out"), &png]);
        let chain = r.join("c.pgm");
        qvae_cmd(&["chain", "--checkpoint"], &[&ck, Path::new("--out"), &chain]);
        grids.push((read(&png), read(&chain)));
    }
    checks.push(("eval report", evals[0] == evals[1]));
    checks.push(("sample and chain grids", grids[0] == grids[1]));
    let calib: Vec<Vec<u8>> = (0..2).map(|_| qvae_cmd(&["calib", "--steps", "40"], &[]).stdout).collect();
    checks.push(("calib summary", calib[0] == calib[1]));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty();
    let detail = if pass {
        format!("{} outputs byte-identical across two runs", checks.len())
    } else {
        format!("differing: {}", failed.join(", "))
    };
    report(13, "reproducibility", pass, &detail, t);
    assert!(pass);
}

// ------------------------------------------------------------ nightly runs

const NIGHTLY_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const NIGHTLY_EPOCHS: usize = 20;
const NIGHTLY_RAMP: usize = 8;
const FINAL_K: usize = 250;
const CACHE_VERSION: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Prior {
    Bernoulli,
    Chimera,
    Pegasus,
    Complete,
}

impl Prior {
    fn graph(self) -> GraphSpec {
        match self {
            Prior::Bernoulli => GraphSpec::with_nodes(GraphKind::Bernoulli, 288),
            Prior::Chimera => GraphSpec::chimera(6, 6),
            Prior::Pegasus => GraphSpec { kind: GraphKind::Pegasus, rows: Some(6), ..GraphSpec::default() },
            Prior::Complete => GraphSpec::with_nodes(GraphKind::Complete, 288),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RunSummary {
    final_ll: LogLikelihood,
    /// `K`-sample bound per validation example, `log Z` included.
    per_example: Vec<f64>,
    records: Vec<MetricRecord>,
    diverged: Option<String>,
    lag1: f64,
    w_l1: f64,
}

impl RunSummary {
    fn active_at(&self, epoch: usize) -> Option<usize> {
        self.records.iter().find(|r| r.epoch == epoch).and_then(|r| r.active_units)
    }
}

struct Mnist {
    train: Array2<f64>,
    val: Array2<f64>,
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist() -> Mnist {
    let dir = repo_root().join("data");
    let images = dir.join("mnist10k-images.idx");
    assert!(
        images.exists(),
        "{} missing; generate it with scripts/mnist_npm_to_idx.py",
        images.display()
    );
    let all = load_idx(&images, Some(&dir.join("mnist10k-labels.idx")), Some(28)).unwrap();
    let split = SplitManifest::new(all.len(), 1000, 0, 0).unwrap();
    let train = all.subset(&split.train).images;
    let val = binarize_fixed(&all.subset(&split.val).images, 0).unwrap();
    Mnist { train, val }
}

fn nightly_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: NIGHTLY_EPOCHS,
        kl_ramp_epochs: NIGHTLY_RAMP,
        lr_decay_epochs: NIGHTLY_EPOCHS,
        metrics_every: 4,
        neg_samples: 500,
        eval_examples: 500,
        eval_k: 50,
        seed,
        log_z: PaConfig { population: 256, beta_ladder: linear_ladder(32), sweeps_per_step: 2, bootstrap: 50, ..PaConfig::default() },
        ..TrainConfig::default()
    }
}

static RUN_LOCK: Mutex<()> = Mutex::new(());

/// Trains (or loads from the cache) one desk-scale MNIST run.
fn nightly_run(prior: Prior, hierarchy: HierarchyScheme, seed: u64, sampler: SamplerSpec) -> RunSummary {
    let model_cfg = ModelConfig { x_dim: 784, graph: prior.graph(), hierarchy, arch: ArchConfig::default() };
    let train_cfg = nightly_train_config(seed);
    let key = {
        let mut h = DefaultHasher::new();
        CACHE_VERSION.hash(&mut h);
        serde_json::to_string(&(&model_cfg, &train_cfg, &sampler)).unwrap().hash(&mut h);
        FINAL_K.hash(&mut h);
        format!("{:?}-{:?}-{seed}-{:016x}", prior, hierarchy, h.finish()).to_lowercase()
    };
    let cache_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("nightly-runs");
    let path = cache_dir.join(format!("{key}.json"));
    let _guard = RUN_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(s) = serde_json::from_str(&text) {
            return s;
        }
    }
    let started = Instant::now();
    let data = mnist();
    let model = Model::new(model_cfg, seed).unwrap();
    let mut trainer = Trainer::new(train_cfg, model, &sampler).unwrap();
    let outcome = trainer.run(&data.train, &data.val, &mut |_| Ok(())).unwrap();
    let mut m = trainer.state.model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
    let (final_ll, per_example) = if outcome.diverged.is_none() {
        let (log_z, log_z_se) = estimate_log_z(&m.effective_prior(), &PaConfig::default(), &mut rng).unwrap();
        let per = iw_bounds(&mut m, &data.val, FINAL_K, log_z, &mut rng).unwrap();
        let n = per.len();
        let std_err = (variance(&per) / n as f64 + log_z_se * log_z_se).sqrt();
        (LogLikelihood { nats: mean(&per), std_err, k: FINAL_K, examples: n, log_z, log_z_se }, per)
    } else {
        (LogLikelihood { nats: f64::NEG_INFINITY, std_err: 0.0, k: FINAL_K, examples: 0, log_z: f64::NAN, log_z_se: 0.0 }, Vec::new())
    };
    let lag1 = match gibbs_walk(&m, 100, 60, FrameUpdate::Gibbs { sweeps: 1 }, &mut rng) {
        Ok(walk) => lag_autocorrelation(&walk, 1, 10),
        Err(_) => f64::NAN,
    };
    let summary =
        RunSummary { final_ll, per_example, records: outcome.records, diverged: outcome.diverged, lag1, w_l1: m.prior.weight_l1() };
    std::fs::create_dir_all(&cache_dir).unwrap();
    std::fs::write(&path, serde_json::to_string(&summary).unwrap()).unwrap();
    let _ = writeln!(
        std::io::stdout().lock(),
        "    run {key}: iw_ll {:.3} ± {:.3}, lag1 {:.4}, |W|₁ {:.2} ({:.0} s)",
        summary.final_ll.nats,
        summary.final_ll.std_err,
        summary.lag1,
        summary.w_l1,
        started.elapsed().as_secs_f64()
    );
    summary
}

fn pcd() -> SamplerSpec {
    SamplerSpec::Pcd { sweeps: 1 }
}

fn lls(prior: Prior, hierarchy: HierarchyScheme) -> Vec<RunSummary> {
    NIGHTLY_SEEDS.iter().map(|&s| nightly_run(prior, hierarchy, s, pcd())).collect()
}

fn fmt_lls(v: &[RunSummary]) -> String {
    v.iter().map(|r| format!("{:.2}", r.final_ll.nats)).collect::<Vec<_>>().join(" ")
}

/// Standard error of the mean paired difference `a - b` over the shared
/// validation examples, plus both `log Z` errors.
fn paired_se(a: &RunSummary, b: &RunSummary) -> f64 {
    if a.per_example.len() != b.per_example.len() || a.per_example.is_empty() {
        return 0.0;
    }
    let diff: Vec<f64> = a.per_example.iter().zip(&b.per_example).map(|(x, y)| x - y).collect();
    let n = diff.len() as f64;
    (variance(&diff) / n + a.final_ll.log_z_se.powi(2) + b.final_ll.log_z_se.powi(2)).sqrt()
}

/// `a ≥ b` allowing a tie within two paired standard errors.
fn at_least(a: &RunSummary, b: &RunSummary) -> bool {
    a.final_ll.nats + 2.0 * paired_se(a, b) >= b.final_ll.nats
}

#[test]
#[ignore = "nightly"]
fn c07_chimera_beats_bernoulli() {
    let t = Instant::now();
    let chim = lls(Prior::Chimera, HierarchyScheme::Bipartite);
    let bern = lls(Prior::Bernoulli, HierarchyScheme::Bipartite);
    let wins = chim.iter().zip(&bern).filter(|(c, b)| c.final_ll.nats > b.final_ll.nats).count();
    let pass = wins >= 4;
    report(
        7,
        "Chimera prior beats Bernoulli prior",
        pass,
        &format!("{wins}/5 seeds (need 4); Chimera [{}] vs Bernoulli [{}]", fmt_lls(&chim), fmt_lls(&bern)),
        t,
    );
    assert!(pass);
}

#[test]
#[ignore = "nightly"]
fn c08_connectivity_ordering() {
    let t = Instant::now();
    let comp = lls(Prior::Complete, HierarchyScheme::Bipartite);
    let peg = lls(Prior::Pegasus, HierarchyScheme::Bipartite);
    let chim = lls(Prior::Chimera, HierarchyScheme::Bipartite);
    let bern = lls(Prior::Bernoulli, HierarchyScheme::Bipartite);
    let ok: Vec<bool> = (0..5)
        .map(|i| {
            at_least(&comp[i], &peg[i])
                && at_least(&peg[i], &chim[i])
                && at_least(&chim[i], &bern[i])
                && comp[i].final_ll.nats > bern[i].final_ll.nats
        })
        .collect();
    let holds = ok.iter().filter(|&&b| b).count();
    let pass = holds >= 3;
    report(
        8,
        "Complete >= Pegasus >= Chimera >= Bernoulli",
        pass,
        &format!(
            "ordering holds in {holds}/5 seeds (need 3); Complete [{}] Pegasus [{}] Chimera [{}] Bernoulli [{}]",
            fmt_lls(&comp),
            fmt_lls(&peg),
            fmt_lls(&chim),
            fmt_lls(&bern)
        ),
        t,
    );
    assert!(pass);
}

#[test]
#[ignore = "nightly"]
fn c09_chains_mapping_beats_bipartite() {
    let t = Instant::now();
    let chains = lls(Prior::Chimera, HierarchyScheme::Chains);
    let bip = lls(Prior::Chimera, HierarchyScheme::Bipartite);
    let wins = chains.iter().zip(&bip).filter(|(c, b)| at_least(c, b)).count();
    let pass = wins >= 4;
    report(
        9,
        "Chains mapping >= Bipartite mapping",
        pass,
        &format!("{wins}/5 seeds (need 4); Chains [{}] vs Bipartite [{}]", fmt_lls(&chains), fmt_lls(&bip)),
        t,
    );
    assert!(pass);
}

#[test]
#[ignore = "nightly"]
fn c10_kl_ramp_shuts_down_units() {
    let t = Instant::now();
    let mut pairs = Vec::new();
    for prior in [Prior::Chimera, Prior::Bernoulli] {
        for &seed in &NIGHTLY_SEEDS {
            let run = nightly_run(prior, HierarchyScheme::Bipartite, seed, pcd());
            pairs.push((run.active_at(0), run.active_at(NIGHTLY_RAMP)));
        }
    }
    let pass = pairs.iter().all(|p| matches!(p, (Some(a), Some(b)) if b < a));
    let shown: Vec<String> = pairs.iter().map(|(a, b)| format!("{}->{}", a.unwrap_or(0), b.unwrap_or(0))).collect();
    report(
        10,
        "active units fall during the KL ramp",
        pass,
        &format!("ramp start -> ramp end per run (Chimera seeds, then Bernoulli): {}", shown.join(" ")),
        t,
    );
    assert!(pass);
}

#[test]
#[ignore = "nightly"]
fn c11_complete_prior_chains_are_sticky() {
    let t = Instant::now();
    let comp: Vec<f64> = NIGHTLY_SEEDS.iter().map(|&s| nightly_run(Prior::Complete, HierarchyScheme::Bipartite, s, pcd()).lag1).collect();
    let bern: Vec<f64> = NIGHTLY_SEEDS.iter().map(|&s| nightly_run(Prior::Bernoulli, HierarchyScheme::Bipartite, s, pcd()).lag1).collect();
    let (c, b) = (mean(&comp), mean(&bern));
    let pass = b.abs() < 0.05 && c >= 5.0 * b.abs() && c > 0.0;
    report(
        11,
        "complete-prior Gibbs walks stay correlated",
        pass,
        &format!("lag-1 autocorrelation Complete {c:.4} vs Bernoulli {b:.4} (need >= 5x and |Bernoulli| < 0.05)"),
        t,
    );
    assert!(pass);
}

#[test]
#[ignore = "nightly"]
fn c12_noisier_annealer_inflates_couplings() {
    let t = Instant::now();
    let run = |preset: EmulatorPreset| {
        let cfg = EmulatorConfig { reads_per_transform: 100, sweeps: 32, ..preset.config() };
        nightly_run(Prior::Chimera, HierarchyScheme::Bipartite, 1, SamplerSpec::Emulator(cfg))
    };
    let low = run(EmulatorPreset::LowNoise);
    let base = run(EmulatorPreset::Baseline);
    let pass = base.diverged.is_some() || base.w_l1 > low.w_l1;
    report(
        12,
        "baseline-noise annealer inflates |W|",
        pass,
        &format!(
            "terminal |W|₁ baseline {:.2}{} vs low-noise {:.2}",
            base.w_l1,
            if base.diverged.is_some() { " (diverged)" } else { "" },
            low.w_l1
        ),
        t,
    );
    assert!(pass);
}

#[test]
fn nightly_config_is_valid() {
    nightly_train_config(1).validate().unwrap();
    for p in [Prior::Bernoulli, Prior::Chimera, Prior::Pegasus, Prior::Complete] {
        assert_eq!(p.graph().build().unwrap().num_nodes(), 288);
    }
}
