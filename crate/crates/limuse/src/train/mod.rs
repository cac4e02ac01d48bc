//! Two-stage training: full precision first, then quantization-aware.
//!
//! Per step: seeded shuffle, forward, negative-SI-SDR loss, backward,
//! global L2 gradient clipping, Adam. Per epoch: validation SI-SDR drives
//! a halve-on-plateau schedule with early stopping, and the best
//! checkpoint (by validation SI-SDR, ties to the earlier epoch) is what
//! the stage returns. The QAT stage restarts the temperature schedule at
//! epoch 1 so the sigmoid staircase starts soft.

mod checkpoint;
mod config_text;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadedModel, TrainState};
pub use config_text::{config_from_text, config_to_text, train_config_from_text};

use crate::error::{Error, Result};
use crate::io::manifest::Sample;
use crate::metrics::{self, MetricSummary};
use crate::model::LiMuseModel;
use crate::nn::{ParamStore, Pass};
use crate::quant::TemperatureSchedule;
use crate::rng::Rng;
use crate::synth::MixtureSample;
use crate::tensor::{Tape, Tensor};

// ── Configuration ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub max_epochs: usize,
    pub patience_halve: usize,
    pub patience_stop: usize,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-3,
            max_epochs: 50,
            patience_halve: 4,
            patience_stop: 6,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience_stop < self.patience_halve {
            return Err(Error::Config(format!(
                "patience_stop {} < patience_halve {}",
                self.patience_stop, self.patience_halve
            )));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

// ── Dataset ──────────────────────────────────────────────────────────

/// In-memory dataset with batch assembly.
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_mixtures(mixtures: &[MixtureSample]) -> Self {
        Dataset { samples: mixtures.iter().map(Sample::from).collect() }
    }

    pub fn from_dir(dir: &std::path::Path) -> Result<Self> {
        Ok(Dataset { samples: crate::io::manifest::load_split(dir)? })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stack a batch into (mixture, voiceprint, visual, target) tensors.
    /// All samples in a batch must share lengths.
    pub fn batch(&self, idxs: &[usize]) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let b = idxs.len();
        let first = &self.samples[idxs[0]];
        let (mics, n, u, e) =
            (first.mics, first.samples, first.voiceprint.len(), first.visual_frames);
        let d = first.visual.len() / e;
        let mut mix = Vec::with_capacity(b * mics * n);
        let mut vp = Vec::with_capacity(b * u);
        let mut vis = Vec::with_capacity(b * d * e);
        let mut target = Vec::with_capacity(b * n);
        for &i in idxs {
            let s = &self.samples[i];
            if s.samples != n || s.visual_frames != e || s.voiceprint.len() != u {
                return Err(Error::Data("batch mixes incompatible sample lengths".into()));
            }
            mix.extend_from_slice(&s.mixture);
            vp.extend_from_slice(&s.voiceprint);
            vis.extend_from_slice(&s.visual);
            target.extend_from_slice(&s.target);
        }
        Ok((
            Tensor::from_vec(mix, &[b, mics, n])?,
            Tensor::from_vec(vp, &[b, u])?,
            Tensor::from_vec(vis, &[b, d, e])?,
            Tensor::from_vec(target, &[b, n])?,
        ))
    }
}

// ── Loss ─────────────────────────────────────────────────────────────

/// Negative SI-SDR, averaged over the batch, capped at the metric ceiling
/// (so a perfect reconstruction gives exactly `-cap`).
pub fn si_sdr_loss(est: &Tensor, target: &Tensor) -> Result<Tensor> {
    let shape = est.shape();
    if shape != target.shape() || shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "si_sdr_loss",
            lhs: shape.to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let b = shape[0];
    let tiny = 1e-30;
    let mut acc: Option<Tensor> = None;
    for i in 0..b {
        let e_i = est.slice_axis(0, i, 1)?;
        let t_i = target.slice_axis(0, i, 1)?.detach();
        let ref_energy: f64 = t_i.data().iter().map(|v| v * v).sum();
        if ref_energy == 0.0 {
            return Err(Error::invalid("si_sdr_loss", "reference signal is all zero"));
        }
        let dot = e_i.mul(&t_i)?.sum_all();
        // ||projection||^2 = dot^2 / ||ref||^2
        let target_energy = dot.mul(&dot)?.scale(1.0 / ref_energy);
        let projection = t_i.mul(&dot.scale(1.0 / ref_energy))?;
        let residual = e_i.sub(&projection)?;
        let noise_energy = residual.mul(&residual)?.sum_all();
        let si = target_energy
            .affine(1.0, tiny)
            .ln()
            .sub(&noise_energy.affine(1.0, tiny).ln())?
            .scale(10.0 / std::f64::consts::LN_10)
            .clamp(-metrics::METRIC_CAP_DB, metrics::METRIC_CAP_DB);
        acc = Some(match acc {
            None => si,
            Some(a) => a.add(&si)?,
        });
    }
    Ok(acc.expect("non-empty batch").scale(-1.0 / b as f64))
}

// ── Optimizer ────────────────────────────────────────────────────────

/// Adam with bias correction. State grows lazily, so parameters added
/// after construction (QAT scales) are covered automatically.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            while self.m.len() <= id.0 {
                self.m.push(Vec::new());
                self.v.push(Vec::new());
            }
            let Some(grad) = store.grad(id) else { continue };
            let grad = grad.to_vec();
            let n = grad.len();
            if self.m[id.0].len() != n {
                self.m[id.0] = vec![0.0; n];
                self.v[id.0] = vec![0.0; n];
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let data = store.data_mut(id);
            for j in 0..n {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad[j] * grad[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn state(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) {
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for &id in &ids {
        if let Some(g) = store.grad(id) {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for &id in &ids {
            if let Some(g) = store.grad(id) {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                store.set_grad(id, scaled);
            }
        }
    }
    norm
}

// ── Learning-rate schedule ───────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Halve,
    Stop,
}

/// Halve after `patience_halve` consecutive non-improving epochs, stop
/// after `patience_stop`. Improvement is strict (ties keep the earlier
/// best).
#[derive(Clone, Debug)]
pub struct PlateauSchedule {
    pub patience_halve: usize,
    pub patience_stop: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(patience_halve: usize, patience_stop: usize) -> Self {
        PlateauSchedule { patience_halve, patience_stop, best: f64::NEG_INFINITY, bad_epochs: 0 }
    }

    /// Feed one epoch's validation metric (higher is better).
    /// Returns (improved, action).
    pub fn observe(&mut self, metric: f64) -> (bool, ScheduleAction) {
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
            return (true, ScheduleAction::Continue);
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience_stop {
            (false, ScheduleAction::Stop)
        } else if self.bad_epochs % self.patience_halve == 0 {
            (false, ScheduleAction::Halve)
        } else {
            (false, ScheduleAction::Continue)
        }
    }
}

// ── Training loop ────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    FullPrecision,
    Qat,
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_si_sdr: f64,
    pub lr: f64,
    pub temperature: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_val: f64,
    pub best_epoch: usize,
}

/// Run one training stage, leaving the best-validation parameters in the
/// store. Aborts with a diagnostic naming the first non-finite node when
/// the loss goes NaN.
pub fn train_stage(
    model: &LiMuseModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<TrainOutcome> {
    train_stage_with(model, store, adam, train, val, cfg, stage, None)
}

/// [`train_stage`] with an optional per-epoch observer (progress printing).
#[allow(clippy::too_many_arguments)]
pub fn train_stage_with(
    model: &LiMuseModel,
    store: &mut ParamStore,
    adam: &mut Adam,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
    on_epoch: Option<&dyn Fn(&EpochStats)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("empty training or validation split".into()));
    }
    let temp_schedule = TemperatureSchedule::new(model.cfg.t0);
    let mut schedule = PlateauSchedule::new(cfg.patience_halve, cfg.patience_stop);
    let mut lr = cfg.lr_init;
    let mut history = Vec::new();
    let mut best_snapshot = store.snapshot();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let shuffle_root = Rng::new(cfg.seed ^ 0x7261_696e);

    for epoch in 1..=cfg.max_epochs {
        // temperature restarts at 1 in the QAT stage
        let temperature = match stage {
            Stage::Qat => Some(temp_schedule.at_epoch(epoch)),
            Stage::FullPrecision => None,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_root.derive(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (mix, vp, vis, target) = train.batch(chunk)?;
            let tape = Tape::new();
            let pass = match temperature {
                Some(t) => Pass::qat_train(&tape, t),
                None => Pass::train(&tape),
            };
            store.clear_grads();
            let out = model.forward(&pass, store, &mix, &vp, &vis)?;
            let loss = si_sdr_loss(&out.wave, &target)?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                let spot = tape
                    .first_non_finite()
                    .unwrap_or_else(|| "loss only (all nodes finite)".into());
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, first at {spot}"
                )));
            }
            loss.backward()?;
            pass.harvest_grads(store);
            clip_grad_norm(store, cfg.clip_norm);
            adam.step(store, lr);
            loss_sum += loss_value;
            batches += 1;
        }

        let val_si_sdr = validation_si_sdr(model, store, val, stage)?;
        let (improved, action) = schedule.observe(val_si_sdr);
        if improved {
            best_snapshot = store.snapshot();
            best_val = val_si_sdr;
            best_epoch = epoch;
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_si_sdr,
            lr,
            temperature,
        };
        if let Some(cb) = on_epoch {
            cb(&stats);
        }
        history.push(stats);
        match action {
            ScheduleAction::Continue => {}
            ScheduleAction::Halve => lr *= 0.5,
            ScheduleAction::Stop => break,
        }
    }

    store.restore(&best_snapshot);
    Ok(TrainOutcome { history, best_val, best_epoch })
}

fn validation_si_sdr(
    model: &LiMuseModel,
    store: &ParamStore,
    val: &Dataset,
    stage: Stage,
) -> Result<f64> {
    let mut vals = Vec::with_capacity(val.len());
    for i in 0..val.len() {
        let (mix, vp, vis, _) = val.batch(&[i])?;
        let pass = match stage {
            Stage::Qat => Pass::quant_eval(),
            Stage::FullPrecision => Pass::eval(),
        };
        let out = model.forward(&pass, store, &mix, &vp, &vis)?;
        vals.push(metrics::si_sdr(out.wave.data(), &val.samples[i].target)?);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Attach quantizers (K-means init from the loaded full-precision
/// weights) and run the QAT stage.
pub fn quantize_stage(
    model: &mut LiMuseModel,
    store: &mut ParamStore,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model.attach_quantizers(store, cfg.seed ^ 0x71)?;
    // stage 2 reuses the stage-1 learning-rate policy; a fresh optimizer
    // covers the new scale parameters
    let mut adam = Adam::new(cfg);
    train_stage(model, store, &mut adam, train, val, cfg, Stage::Qat)
}

/// [`quantize_stage`] with an optional per-epoch observer.
pub fn quantize_stage_with(
    model: &mut LiMuseModel,
    store: &mut ParamStore,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    on_epoch: Option<&dyn Fn(&EpochStats)>,
) -> Result<TrainOutcome> {
    model.attach_quantizers(store, cfg.seed ^ 0x71)?;
    let mut adam = Adam::new(cfg);
    train_stage_with(model, store, &mut adam, train, val, cfg, Stage::Qat, on_epoch)
}

// ── Evaluation ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub si_sdr: MetricSummary,
    pub si_sdri: MetricSummary,
    pub sdr: MetricSummary,
    pub sdri: MetricSummary,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        format!(
            concat!(
                "{{\"si_sdr_mean\":{:.6},\"si_sdr_std\":{:.6},",
                "\"si_sdri_mean\":{:.6},\"si_sdri_std\":{:.6},",
                "\"sdr_mean\":{:.6},\"sdr_std\":{:.6},",
                "\"sdri_mean\":{:.6},\"sdri_std\":{:.6},\"count\":{}}}"
            ),
            self.si_sdr.mean,
            self.si_sdr.std,
            self.si_sdri.mean,
            self.si_sdri.std,
            self.sdr.mean,
            self.sdr.std,
            self.sdri.mean,
            self.sdri.std,
            self.si_sdr.count
        )
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "SI-SDR : {}", self.si_sdr)?;
        writeln!(f, "SI-SDRi: {}", self.si_sdri)?;
        writeln!(f, "SDR    : {}", self.sdr)?;
        write!(f, "SDRi   : {}", self.sdri)
    }
}

/// Which cue streams the evaluation feeds to the model (ablations zero a
/// stream at the input).
#[derive(Clone, Copy, Debug)]
pub struct CueSelection {
    pub use_voiceprint: bool,
    pub use_visual: bool,
}

impl Default for CueSelection {
    fn default() -> Self {
        CueSelection { use_voiceprint: true, use_visual: true }
    }
}

pub fn evaluate(
    model: &LiMuseModel,
    store: &ParamStore,
    data: &Dataset,
    quantized: bool,
    cues: CueSelection,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("empty evaluation split".into()));
    }
    let mut si = Vec::new();
    let mut sii = Vec::new();
    let mut sd = Vec::new();
    let mut sdi = Vec::new();
    for i in 0..data.len() {
        let (mix, mut vp, mut vis, _) = data.batch(&[i])?;
        if !cues.use_voiceprint {
            vp = Tensor::zeros(vp.shape());
        }
        if !cues.use_visual {
            vis = Tensor::zeros(vis.shape());
        }
        let pass = if quantized { Pass::quant_eval() } else { Pass::eval() };
        let out = model.forward(&pass, store, &mix, &vp, &vis)?;
        let sample = &data.samples[i];
        let est = out.wave.data();
        let mix_ch0 = &sample.mixture[..sample.samples];
        si.push(metrics::si_sdr(est, &sample.target)?);
        sii.push(metrics::si_sdr_improvement(est, &sample.target, mix_ch0)?);
        sd.push(metrics::sdr(est, &sample.target)?);
        sdi.push(metrics::sdr_improvement(est, &sample.target, mix_ch0)?);
    }
    Ok(EvalReport {
        si_sdr: MetricSummary::from_values(&si),
        si_sdri: MetricSummary::from_values(&sii),
        sdr: MetricSummary::from_values(&sd),
        sdri: MetricSummary::from_values(&sdi),
    })
}
