//! Teacher-forced training with an L2 loss on normalized features.

mod optim;
mod schedule;

use std::sync::Arc;
use std::time::Instant;

use numgrad::{Matrix, NumError, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use optim::{clip_global_norm, global_norm, Adam};
pub use schedule::lr;

use crate::features::{normalize, FeatureError, WindowSet};
use crate::model::{teacher_forced_output, Checkpoint, ForwardCtx, Layout, ModelConfig, ModelError, ModelParams};
use crate::types::{NormStats, WindowSample};

/// Which feature components the loss covers. Must agree with the model's
/// `feature_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Velocity increments only.
    Vanilla,
    /// Velocity increments plus normalized heading.
    Oriented,
}

impl LossMode {
    pub fn feature_dim(self) -> usize {
        match self {
            Self::Vanilla => 2,
            Self::Oriented => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub base_scale: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Global gradient-norm ceiling; `None` or `0.0` disables clipping
    /// (TOML has no null, so config files use `0.0`).
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            warmup_epochs: 10,
            base_scale: 1.0,
            seed: 7,
            loss_mode: LossMode::Vanilla,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.warmup_epochs == 0 {
            return bad("warmup_epochs must be at least 1");
        }
        if !(self.base_scale >= 0.0 && self.base_scale.is_finite()) {
            return bad("base_scale must be finite and non-negative");
        }
        if self.clip_norm.is_some_and(|c| !(c >= 0.0 && c.is_finite())) {
            return bad("clip_norm must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean teacher-forced loss over the training windows, per epoch.
    pub epoch_losses: Vec<f64>,
    /// Learning rate used at each optimizer step.
    pub lr_trace: Vec<f64>,
    pub steps_per_epoch: usize,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// Losses and learning rates compared bit for bit; wall time ignored.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.epoch_losses) == bits(&other.epoch_losses) && bits(&self.lr_trace) == bits(&other.lr_trace)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("loss diverged in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// One normalized window as dense matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub obs: Matrix,
    pub target: Matrix,
}

impl Example {
    pub fn from_normalized(s: &WindowSample) -> Result<Self, ModelError> {
        let rows = |fs: &[crate::types::FeatureVec]| {
            let dim = fs.first().map_or(2, |f| f.dim());
            let data: Vec<f64> = fs.iter().flat_map(|f| f.to_vec()).collect();
            Matrix::new(fs.len(), dim, data)
        };
        Ok(Self {
            obs: rows(&s.obs)?,
            target: rows(&s.target)?,
        })
    }
}

/// Normalizes raw windows with `stats` and packs them as [`Example`]s.
pub fn prepare(samples: &[WindowSample], stats: &NormStats) -> Result<Vec<Example>, TrainError> {
    samples
        .iter()
        .map(|s| Ok(Example::from_normalized(&normalize(s, stats)?)?))
        .collect()
}

/// Mean over all steps and components of `(pred − target)²`.
pub fn l2_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, ModelError> {
    let (p, t) = (tape.value(pred).shape(), tape.value(target).shape());
    if p != t {
        return Err(ModelError::ShapeMismatch(format!("prediction {p:?} vs target {t:?}")));
    }
    Ok(tape.mse(pred, target)?)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Teacher-forced loss of one example and its gradient for every parameter.
pub fn example_gradients(
    cfg: &ModelConfig,
    layout: &Layout,
    shared: &[Arc<Matrix>],
    ex: &Example,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Matrix>), ModelError> {
    let mut tape = Tape::new();
    let mut ctx = ForwardCtx::with_shared(&mut tape, cfg, layout, shared);
    if let Some(seed) = dropout_seed {
        ctx = ctx.training(seed);
    }
    let out = teacher_forced_output(&mut tape, &mut ctx, &ex.obs, &ex.target)?;
    let target = tape.leaf(ex.target.clone());
    let loss = l2_loss(&mut tape, out, target)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let g = ctx
        .bound
        .vars()
        .iter()
        .zip(shared)
        .map(|(&v, t)| grads.take_or_zeros(v, t))
        .collect();
    Ok((value, g))
}

/// Mean loss over `batch` and its averaged gradients. Examples run in
/// parallel; the reduction is sequential in batch order, so the result does
/// not depend on the number of workers.
pub fn batch_gradients(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &[&Example],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Matrix>), ModelError> {
    let shared: Vec<Arc<Matrix>> = params.tensors.iter().cloned().map(Arc::new).collect();
    batch_gradients_shared(cfg, &params.layout, &shared, batch, dropout_seed)
}

fn batch_gradients_shared(
    cfg: &ModelConfig,
    layout: &Layout,
    shared: &[Arc<Matrix>],
    batch: &[&Example],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Matrix>), ModelError> {
    let per: Vec<(f64, Vec<Matrix>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let seed = dropout_seed.map(|s| mix(s, i as u64, 1));
            example_gradients(cfg, layout, shared, ex, seed)
        })
        .collect::<Result<_, _>>()?;
    let n = batch.len() as f64;
    let mut iter = per.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or_else(|| ModelError::ShapeMismatch("empty batch".into()))?;
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
    }
    for g in &mut grads {
        g.scale_in_place(1.0 / n);
    }
    Ok((loss / n, grads))
}

/// Mean teacher-forced loss over `batch` without dropout or gradients.
pub fn batch_loss(cfg: &ModelConfig, params: &ModelParams, batch: &[&Example]) -> Result<f64, ModelError> {
    let shared: Vec<Arc<Matrix>> = params.tensors.iter().cloned().map(Arc::new).collect();
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::with_shared(&mut tape, cfg, &params.layout, &shared);
            let out = teacher_forced_output(&mut tape, &mut ctx, &ex.obs, &ex.target)?;
            let target = tape.leaf(ex.target.clone());
            let loss = l2_loss(&mut tape, out, target)?;
            Ok(tape.value(loss).get(0, 0))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

fn diverged(e: ModelError, epoch: usize) -> TrainError {
    match e {
        ModelError::Numeric(NumError::NonFinite(_)) => TrainError::DivergedLoss { epoch },
        other => other.into(),
    }
}

/// Trains from freshly initialized parameters (seeded by `train_cfg.seed`).
pub fn train_examples(
    examples: &[Example],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    train_from(params, examples, model_cfg, train_cfg)
}

/// Continues training `params`.
pub fn train_from(
    mut params: ModelParams,
    examples: &[Example],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if train_cfg.loss_mode.feature_dim() != model_cfg.feature_dim {
        return Err(TrainError::InvalidConfig(format!(
            "loss mode {:?} needs feature_dim {}, model has {}",
            train_cfg.loss_mode,
            train_cfg.loss_mode.feature_dim(),
            model_cfg.feature_dim
        )));
    }
    let started = Instant::now();
    let steps_per_epoch = examples.len().div_ceil(train_cfg.batch_size);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(train_cfg.seed, 0, 2));
    let mut opt = Adam::new(&params.tensors);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(train_cfg.epochs),
        lr_trace: Vec::with_capacity(train_cfg.epochs * steps_per_epoch),
        steps_per_epoch,
        wall_time_s: 0.0,
    };
    let mut step: u64 = 0;
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let dropout_seed = (model_cfg.dropout > 0.0).then(|| mix(train_cfg.seed, step, 3));
            let (loss, mut grads) = batch_gradients(model_cfg, &params, &batch, dropout_seed)
                .map_err(|e| diverged(e, epoch))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::DivergedLoss { epoch });
            }
            if let Some(c) = train_cfg.clip_norm.filter(|&c| c > 0.0) {
                clip_global_norm(&mut grads, c);
            }
            let rate = lr(
                step,
                steps_per_epoch as u64,
                train_cfg.warmup_epochs as u64,
                train_cfg.base_scale,
                model_cfg.d_model,
            );
            opt.step(&mut params.tensors, &grads, rate);
            if !params.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            report.lr_trace.push(rate);
            epoch_loss += loss * batch.len() as f64;
        }
        report.epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// Trains on the train split of `set` and packages a self-contained
/// checkpoint.
pub fn train(
    set: &WindowSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), TrainError> {
    if set.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if set.cfg.feature_dim() != model_cfg.feature_dim {
        return Err(TrainError::InvalidConfig(format!(
            "windows have {} features, model expects {}",
            set.cfg.feature_dim(),
            model_cfg.feature_dim
        )));
    }
    let examples = prepare(&set.train, &set.stats)?;
    let (params, report) = train_examples(&examples, model_cfg, train_cfg)?;
    let ckpt = Checkpoint {
        model: model_cfg.clone(),
        windowing: set.cfg.clone(),
        stats: set.stats.clone(),
        params,
        meta: serde_json::json!({
            "seed": train_cfg.seed,
            "epochs": train_cfg.epochs,
            "train_windows": set.train.len(),
            "final_loss": report.final_loss(),
        }),
    };
    Ok((ckpt, report))
}
