//! Training loop: schedules, negative phase, calibration, metric emission
//! and divergence detection.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate, CalibConfig, CalibState};
use crate::data::dynamic_binarize;
use crate::error::{Error, Result};
use crate::eval::{active_units, estimate_log_z, iw_bounds};
use crate::math::mean;
use crate::metrics::{MetricRecord, SamplerEventSummary};
use crate::nets::{LatentDraw, Mode};
use crate::samplers::{PaConfig, Sampler, SamplerSpec};

use super::{kl_weight_at, lr_at, Adam, AdamConfig, Model, Noise, ObjectiveSpec};

/// From `epoch` on, `k` importance samples in each of `d` groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdStage {
    pub k: usize,
    pub d: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_decay_epochs: usize,
    pub tau: f64,
    pub kl_ramp_epochs: usize,
    pub kd_schedule: Vec<KdStage>,
    pub epochs: usize,
    pub clip_b: Option<f64>,
    pub clip_w: Option<f64>,
    pub seed: u64,
    /// Negative-phase draws per gradient step.
    pub neg_samples: usize,
    /// Metric cadence in epochs; 0 keeps only the first and last records.
    pub metrics_every: usize,
    /// Validation examples used for metrics.
    pub eval_examples: usize,
    /// Importance samples for the validation log-likelihood metric.
    pub eval_k: usize,
    pub active_threshold: f64,
    /// Annealer used for `log Z` when the prior is too large to enumerate.
    pub log_z: PaConfig,
    /// Halts as diverged when the coupling L1 norm exceeds this.
    pub max_w_l1: Option<f64>,
    pub adam: AdamConfig,
    pub calib: CalibConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            lr_init: 3e-3,
            lr_min: 1e-4,
            lr_decay_epochs: 1800,
            tau: 1.0 / 7.0,
            kl_ramp_epochs: 200,
            kd_schedule: vec![KdStage { k: 1, d: 8, epoch: 0 }],
            epochs: 100,
            clip_b: None,
            clip_w: None,
            seed: 0,
            neg_samples: 500,
            metrics_every: 10,
            eval_examples: 1000,
            eval_k: 100,
            active_threshold: 0.01,
            log_z: PaConfig::default(),
            max_w_l1: None,
            adam: AdamConfig::default(),
            calib: CalibConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 || self.neg_samples == 0 || self.eval_k == 0 {
            return bad("batch_size, neg_samples and eval_k must be positive".into());
        }
        for (name, v) in [("lr_init", self.lr_init), ("lr_min", self.lr_min), ("tau", self.tau), ("active_threshold", self.active_threshold)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("clip_b", self.clip_b), ("clip_w", self.clip_w), ("max_w_l1", self.max_w_l1)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        let s = &self.kd_schedule;
        if s.is_empty() || s[0].epoch != 0 {
            return bad("kd_schedule must start at epoch 0".into());
        }
        let prod = s[0].k * s[0].d;
        for (i, st) in s.iter().enumerate() {
            if st.k == 0 || st.d == 0 {
                return bad("kd_schedule entries need K, D ≥ 1".into());
            }
            if st.k * st.d != prod {
                return bad(format!("K·D must stay {prod} across kd_schedule, entry {i} has {}", st.k * st.d));
            }
            if i > 0 && st.epoch <= s[i - 1].epoch {
                return bad("kd_schedule epochs must increase".into());
            }
        }
        if self.calib.enabled {
            self.calib.validate()?;
        }
        self.log_z.validate()
    }

    pub fn stage_at(&self, epoch: usize) -> KdStage {
        *self.kd_schedule.iter().rev().find(|s| s.epoch <= epoch).unwrap_or(&self.kd_schedule[0])
    }
}

/// Everything needed to resume training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub calib: CalibState,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricRecord>,
    /// Set when the divergence detector halted the run.
    pub diverged: Option<String>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: TrainState,
    sampler: Box<dyn Sampler>,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    calib_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    events: SamplerEventSummary,
    last_objective: Option<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Trainer {
    pub fn new(cfg: TrainConfig, mut model: Model, sampler: &SamplerSpec) -> Result<Self> {
        cfg.validate()?;
        let calib = if cfg.calib.enabled {
            CalibState::from_config(&cfg.calib)?
        } else {
            CalibState::new(model.beta_eff, cfg.calib.gamma.max(f64::MIN_POSITIVE), cfg.calib.window.max(1))?
        };
        model.beta_eff = calib.beta_eff();
        let state = TrainState { model, adam: Adam::new(cfg.adam), calib, epoch: 0, step: 0 };
        Self::resume(cfg, state, sampler)
    }

    /// Continues from a saved state; random streams are re-derived from the
    /// seed and the epoch counter.
    pub fn resume(cfg: TrainConfig, state: TrainState, sampler: &SamplerSpec) -> Result<Self> {
        cfg.validate()?;
        let offset = state.epoch as u64 * 16;
        let seed = cfg.seed;
        Ok(Trainer {
            sampler: sampler.build(seed.wrapping_add(offset).wrapping_add(1))?,
            data_rng: stream(seed, 2 + offset),
            noise_rng: stream(seed, 3 + offset),
            calib_rng: stream(seed, 4 + offset),
            eval_rng: stream(seed, 5 + offset),
            events: SamplerEventSummary::default(),
            last_objective: None,
            cfg,
            state,
        })
    }

    pub fn sampler(&self) -> &dyn Sampler {
        self.sampler.as_ref()
    }

    /// One pass over `data` (grayscale rows in [0,1], binarized per batch).
    /// Returns the mean training objective, without `log Z`.
    pub fn train_epoch(&mut self, data: &Array2<f64>) -> Result<f64> {
        let n = data.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let cfg = self.cfg.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.data_rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let nb = batches.len();
        let stage = cfg.stage_at(self.state.epoch);
        let mut values = Vec::with_capacity(nb);
        for (i, idx) in batches.into_iter().enumerate() {
            let epoch_f = self.state.epoch as f64 + i as f64 / nb as f64;
            let lr = lr_at(cfg.lr_init, cfg.lr_min, cfg.lr_decay_epochs, epoch_f);
            let kappa = kl_weight_at(cfg.kl_ramp_epochs, epoch_f);
            let x = dynamic_binarize(&data.select(Axis(0), idx), &mut self.data_rng)?;
            values.push(self.step(&x, stage, lr, kappa)?);
        }
        self.state.epoch += 1;
        let m = mean(&values);
        self.last_objective = Some(m);
        Ok(m)
    }

    fn step(&mut self, x: &Array2<f64>, stage: KdStage, lr: f64, kappa: f64) -> Result<f64> {
        let cfg = &self.cfg;
        let step = self.state.step;
        let div = |reason: String| Error::Divergence { step, reason };
        let model = &mut self.state.model;
        let spec = ObjectiveSpec { k: stage.k, d: stage.d, kl_weight: kappa, draw: LatentDraw::Smooth { tau: cfg.tau }, log_z: None };
        let noise = Noise::draw(model, x.nrows() * spec.replicas(), &mut self.noise_rng);
        let neg = self.sampler.negative_phase(&model.prior, cfg.neg_samples)?;
        if let Some(batch) = &neg.batch {
            self.events.absorb(&batch.meta.events);
        }
        if let Some(b) = self.sampler.hidden_beta() {
            self.events.hidden_beta = Some(b);
        }
        model.zero_grad();
        let out = match model.objective(x, &noise, &spec, Some(&neg), Mode::Train, true) {
            Ok(o) => o,
            Err(Error::NonFinite(what)) => return Err(div(format!("non-finite {what}"))),
            Err(e) => return Err(e),
        };
        if !out.value.is_finite() {
            return Err(div("non-finite objective".into()));
        }
        self.state.adam.step(model, lr);
        model.clip_prior(cfg.clip_b, cfg.clip_w);
        if !model.params_finite() {
            return Err(div("non-finite parameters".into()));
        }
        if let Some(limit) = cfg.max_w_l1 {
            let l1 = model.prior.weight_l1();
            if l1 > limit {
                return Err(div(format!("coupling L1 norm {l1:.3} exceeds {limit}")));
            }
        }
        if cfg.calib.enabled && self.state.step % cfg.calib.every as u64 == 0 {
            if let Some(hw) = &neg.batch {
                calibrate(&mut self.state.calib, self.state.step, &model.prior, hw, &cfg.calib.aux, &mut self.calib_rng)?;
                model.beta_eff = self.state.calib.beta_eff();
            }
        }
        self.state.step += 1;
        Ok(out.value)
    }

    /// Validation metrics on the first `eval_examples` rows of `val`
    /// (already binary).
    pub fn evaluate(&mut self, val: &Array2<f64>) -> Result<MetricRecord> {
        let cfg = self.cfg.clone();
        let rows = cfg.eval_examples.min(val.nrows());
        let model = &mut self.state.model;
        let epoch_f = self.state.epoch as f64;
        let mut rec = MetricRecord {
            step: self.state.step,
            epoch: self.state.epoch,
            elbo: None,
            iw_ll: None,
            active_units: None,
            w_l1: model.prior.weight_l1(),
            beta_eff: model.beta_eff,
            sampler_events: std::mem::take(&mut self.events),
            train_objective: self.last_objective,
            kl_weight: kl_weight_at(cfg.kl_ramp_epochs, epoch_f),
            lr: lr_at(cfg.lr_init, cfg.lr_min, cfg.lr_decay_epochs, epoch_f),
            log_z: None,
            log_z_se: None,
        };
        if rows == 0 {
            return Ok(rec);
        }
        let x = val.slice(ndarray::s![..rows, ..]).to_owned();
        let (log_z, se) = estimate_log_z(&model.effective_prior(), &cfg.log_z, &mut self.eval_rng)?;
        rec.log_z = Some(log_z);
        rec.log_z_se = Some(se);
        rec.elbo = Some(mean(&iw_bounds(model, &x, 1, log_z, &mut self.eval_rng)?));
        rec.iw_ll = Some(mean(&iw_bounds(model, &x, cfg.eval_k, log_z, &mut self.eval_rng)?));
        rec.active_units = Some(active_units(model, &x, cfg.active_threshold, &mut self.eval_rng)?);
        Ok(rec)
    }

    fn wants_record(&self, epoch: usize) -> bool {
        let every = self.cfg.metrics_every;
        epoch == 0 || epoch == self.cfg.epochs || epoch == self.cfg.kl_ramp_epochs || (every > 0 && epoch % every == 0)
    }

    /// Trains until `cfg.epochs`, emitting records through `sink`. A divergence
    /// ends the run early and is reported in the outcome rather than as an error.
    pub fn run(
        &mut self,
        train: &Array2<f64>,
        val: &Array2<f64>,
        sink: &mut dyn FnMut(&MetricRecord) -> Result<()>,
    ) -> Result<TrainOutcome> {
        self.run_with(train, val, sink, &mut |_| Ok(true))
    }

    /// Like [`Trainer::run`], calling `after_epoch` once per finished epoch;
    /// returning `false` stops the run.
    pub fn run_with(
        &mut self,
        train: &Array2<f64>,
        val: &Array2<f64>,
        sink: &mut dyn FnMut(&MetricRecord) -> Result<()>,
        after_epoch: &mut dyn FnMut(&mut TrainState) -> Result<bool>,
    ) -> Result<TrainOutcome> {
        let mut records = Vec::new();
        if self.state.epoch == 0 {
            let r = self.evaluate(val)?;
            sink(&r)?;
            records.push(r);
        }
        while self.state.epoch < self.cfg.epochs {
            match self.train_epoch(train) {
                Ok(_) => {}
                Err(Error::Divergence { step, reason }) => {
                    let mut r = self.evaluate_or_partial(val);
                    r.step = step;
                    sink(&r)?;
                    records.push(r);
                    return Ok(TrainOutcome { records, diverged: Some(reason) });
                }
                Err(e) => return Err(e),
            }
            if self.wants_record(self.state.epoch) {
                let r = self.evaluate(val)?;
                sink(&r)?;
                records.push(r);
            }
            if !after_epoch(&mut self.state)? {
                break;
            }
        }
        Ok(TrainOutcome { records, diverged: None })
    }

    /// Metrics after a divergence; evaluation itself may fail on broken parameters.
    fn evaluate_or_partial(&mut self, val: &Array2<f64>) -> MetricRecord {
        let events = self.events.clone();
        match self.evaluate(val) {
            Ok(r) => r,
            Err(_) => MetricRecord {
                step: self.state.step,
                epoch: self.state.epoch,
                elbo: None,
                iw_ll: None,
                active_units: None,
                w_l1: self.state.model.prior.weight_l1(),
                beta_eff: self.state.model.beta_eff,
                sampler_events: events,
                train_objective: self.last_objective,
                kl_weight: kl_weight_at(self.cfg.kl_ramp_epochs, self.state.epoch as f64),
                lr: lr_at(self.cfg.lr_init, self.cfg.lr_min, self.cfg.lr_decay_epochs, self.state.epoch as f64),
                log_z: None,
                log_z_se: None,
            },
        }
    }
}

/// Fixed binarization of a validation set, reproducible from `seed`.
pub fn binarize_fixed(x: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
    let mut rng = stream(seed, 99);
    dynamic_binarize(x, &mut rng)
}

/// Draws `n` indices without replacement, for subsetting datasets.
pub fn subset_indices<R: Rng + ?Sized>(total: usize, n: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, total, n.min(total)).into_vec()
}
