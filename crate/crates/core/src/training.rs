//! Adam and the minibatch loop with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Parameter};
use crate::noise::NoiseSource;
use crate::objectives::{LossPart, Objective};
use crate::tensor::Tensor;

/// Stream offsets so the shuffle, training noise, validation noise and
/// initialization never share a generator.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const TRAIN_NOISE_STREAM: u64 = 0x4e4f_4953;
const VAL_NOISE_STREAM: u64 = 0x5641_4c49;

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    128
}
fn default_patience() -> usize {
    10
}
fn default_max_epochs() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience_epochs: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size: default_batch(),
            patience_epochs: default_patience(),
            max_epochs: default_max_epochs(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("train.lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("train.eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1");
        }
        if self.patience_epochs == 0 {
            return bad("train.patience_epochs must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs must be >= 1");
        }
        Ok(())
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Parameter]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }
}

/// One bias-corrected Adam update from each parameter's `grad`.
///
/// Every gradient is checked before any value changes, so a failed step
/// leaves parameters and state untouched.
pub fn adam_step(params: &mut [Parameter], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Training and validation summary for one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-step training losses.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_parts: Vec<LossPart>,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    /// Loss or gradient went non-finite; the best parameters so far are kept.
    NonFinite(String),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    /// 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Objective value over `x` in `batch_size` chunks, weighted by chunk size.
pub fn evaluate_loss(
    model: &ModelParams,
    objective: &dyn Objective,
    x: &Tensor,
    batch_size: usize,
    noise: &mut NoiseSource,
) -> Result<(f64, Vec<LossPart>)> {
    let n = x.rows();
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut parts: Vec<LossPart> = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let bound = model.bind_frozen(&mut g);
        let loss = objective.loss(&mut g, &bound, &x.select_rows(chunk), noise)?;
        let w = chunk.len() as f64 / n as f64;
        total += w * loss.value;
        if parts.is_empty() {
            parts = loss.parts.iter().map(|p| LossPart { value: 0.0, ..p.clone() }).collect();
        }
        for (acc, p) in parts.iter_mut().zip(&loss.parts) {
            acc.value += w * p.value;
        }
    }
    Ok((total, parts))
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    train_x: &Tensor,
    val_x: &Tensor,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ModelParams::init(model_cfg, cfg.seed)?;
    train_from(model, cfg, objective, train_x, val_x)
}

/// Trains starting from `model`.
pub fn train_from(
    mut model: ModelParams,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    train_x: &Tensor,
    val_x: &Tensor,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_x.rows() == 0 || val_x.rows() == 0 || train_x.is_empty() || val_x.is_empty() {
        return Err(Error::InvalidArgument("train and validation splits must be non-empty".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut noise = NoiseSource::new(cfg.seed ^ TRAIN_NOISE_STREAM);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_x.rows()).collect();

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut train_sum = 0.0;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_x.select_rows(chunk);
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let loss = objective.loss(&mut g, &bound, &batch, &mut noise)?;
            if !loss.value.is_finite() {
                let e = Error::NonFiniteLoss { epoch, step };
                log::warn!("{e}; keeping epoch {best_epoch} parameters");
                return Ok(finish(best, best_epoch, best_val, history, StopReason::NonFinite(e.to_string())));
            }
            let grads = bound.gradients(&g, loss.total)?;
            for (p, gr) in model.params_mut().iter_mut().zip(grads) {
                p.grad = gr;
            }
            if let Err(e) = adam_step(model.params_mut(), &mut state, cfg) {
                log::warn!("{e}; keeping epoch {best_epoch} parameters");
                return Ok(finish(best, best_epoch, best_val, history, StopReason::NonFinite(e.to_string())));
            }
            train_sum += loss.value;
            steps += 1;
        }

        // Same validation noise every epoch so epochs compare like for like.
        let mut val_noise = NoiseSource::new(cfg.seed ^ VAL_NOISE_STREAM);
        let (val_loss, val_parts) = evaluate_loss(&model, objective, val_x, cfg.batch_size, &mut val_noise)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_sum / steps as f64,
            val_loss,
            val_parts,
            wall_ms: start.elapsed().as_millis(),
        });
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5}", train_sum / steps as f64);
        if !val_loss.is_finite() {
            let e = format!("non-finite validation loss at epoch {epoch}");
            return Ok(finish(best, best_epoch, best_val, history, StopReason::NonFinite(e)));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience_epochs {
                return Ok(finish(best, best_epoch, best_val, history, StopReason::Patience));
            }
        }
    }
    Ok(finish(best, best_epoch, best_val, history, StopReason::MaxEpochs))
}

fn finish(
    mut best: ModelParams,
    best_epoch: usize,
    best_val_loss: f64,
    history: Vec<EpochRecord>,
    stop: StopReason,
) -> TrainOutcome {
    best.zero_grads();
    TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        history,
        stop,
    }
}
