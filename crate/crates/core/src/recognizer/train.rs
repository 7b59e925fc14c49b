//! Mini-batch RMSProp training on CTC loss.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::Noise;
use super::ctc::ctc_required_steps;
use super::decode::greedy_decode;
use super::model::{forward, loss_and_grad};
use super::optim::{learning_rate_at, RmsProp};
use super::{CharSet, ModelParams, RecognizerError, Tensor};
use crate::lexicon::levenshtein;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub batch_size: usize,
    /// Std-dev of the noise added after the conv stack, on standardised activations.
    pub noise_sigma: f64,
    pub max_label_len: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            lr_decay: 0.99,
            rms_decay: 0.9,
            rms_eps: 1e-8,
            batch_size: 50,
            noise_sigma: 0.1,
            max_label_len: 32,
            epochs: 300,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, params: &ModelParams<f32>) -> Result<(), RecognizerError> {
        let bad = |m: String| Err(RecognizerError::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.rms_decay) || self.rms_eps <= 0.0 {
            return bad("rms_decay must lie in [0, 1) and rms_eps be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be non-negative".into());
        }
        if self.max_label_len != params.config.timesteps() {
            return bad(format!(
                "max_label_len {} must equal the model's {} timesteps",
                self.max_label_len,
                params.config.timesteps()
            ));
        }
        Ok(())
    }
}

/// A prepared network input with its target.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub input: Tensor<f32>,
    pub label: Vec<usize>,
    pub text: String,
}

impl TrainItem {
    pub fn new(input: Tensor<f32>, text: &str, charset: &CharSet) -> Result<Self, RecognizerError> {
        Ok(TrainItem {
            input,
            label: charset.encode(text)?,
            text: text.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: RmsProp<f32>,
    pub step: u64,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: &ModelParams<f32>, cfg: &TrainConfig) -> Self {
        TrainState {
            optimizer: RmsProp::new(params, cfg.rms_decay, cfg.rms_eps),
            step: 0,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Mean CTC loss over the items that were used; 0 when none were.
    pub mean_loss: f64,
    pub used: usize,
    /// Batch positions skipped and why.
    pub skipped: Vec<(usize, String)>,
}

fn noise_rng(seed: u64, step: u64, item: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&(item as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn check_label(label: &[usize], cfg: &TrainConfig, timesteps: usize) -> Result<(), RecognizerError> {
    let required = ctc_required_steps(label);
    if label.len() > cfg.max_label_len || required > timesteps {
        return Err(RecognizerError::InfeasibleLabel {
            label_len: label.len(),
            required,
            timesteps,
        });
    }
    Ok(())
}

/// One optimiser step on the mean gradient of the feasible items in `batch`.
/// Infeasible items are skipped and reported.
pub fn train_step(
    batch: &[TrainItem],
    params: &mut ModelParams<f32>,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<StepReport, RecognizerError> {
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    let timesteps = params.config.timesteps();
    for (i, item) in batch.iter().enumerate() {
        if let Err(e) = check_label(&item.label, cfg, timesteps) {
            skipped.push((i, e.to_string()));
            continue;
        }
        let mut rng = noise_rng(cfg.seed, state.step, i);
        let noise = Noise {
            sigma: cfg.noise_sigma,
            rng: &mut rng,
        };
        match loss_and_grad(params, &item.input, &item.label, Some(noise), &mut grads) {
            Ok((loss, _)) => {
                total += loss;
                used += 1;
            }
            Err(e @ RecognizerError::InfeasibleLabel { .. }) | Err(e @ RecognizerError::InvalidLabel(_)) => {
                skipped.push((i, e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    if used > 0 {
        let inv = 1.0 / used as f32;
        for t in grads.tensors_mut() {
            t.scale(inv);
        }
        let lr = learning_rate_at(cfg.learning_rate, cfg.lr_decay, state.epoch);
        state.optimizer.step(params, &grads, lr);
    }
    state.step += 1;
    Ok(StepReport {
        mean_loss: if used > 0 { total / used as f64 } else { 0.0 },
        used,
        skipped,
    })
}

/// Character error rate of greedy decoding over `items`.
pub fn corpus_cer(params: &ModelParams<f32>, items: &[TrainItem], charset: &CharSet) -> Result<f64, RecognizerError> {
    let (mut edits, mut chars) = (0usize, 0usize);
    for item in items {
        let logits = forward(params, &item.input)?;
        let text = charset.decode(&greedy_decode(&logits, charset.blank()));
        edits += levenshtein(&item.text, &text);
        chars += item.text.chars().count();
    }
    Ok(if chars == 0 { 0.0 } else { edits as f64 / chars as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_cer: Option<f64>,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6}", self.epoch, self.loss)?;
        match self.val_cer {
            Some(c) => write!(f, " val_cer {c:.4}")?,
            None => write!(f, " val_cer -")?,
        }
        write!(f, " lr {:.6}", self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub best: ModelParams<f32>,
    pub best_epoch: usize,
    pub epochs: Vec<EpochLog>,
    /// Training items never used because their labels cannot fit.
    pub skipped: Vec<(usize, String)>,
}

/// Trains for `cfg.epochs` epochs with a seeded shuffle each epoch and keeps
/// the parameters with the lowest validation CER (ties: lower training
/// loss). Without validation items the lowest training loss wins.
pub fn fit(
    train: &[TrainItem],
    val: &[TrainItem],
    params: &mut ModelParams<f32>,
    cfg: &TrainConfig,
    charset: &CharSet,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitReport, RecognizerError> {
    cfg.validate(params)?;
    if charset.classes() != params.config.classes {
        return Err(RecognizerError::Charset(format!(
            "charset has {} classes but the model outputs {}",
            charset.classes(),
            params.config.classes
        )));
    }
    let timesteps = params.config.timesteps();
    let mut skipped = Vec::new();
    let usable: Vec<&TrainItem> = train
        .iter()
        .enumerate()
        .filter_map(|(i, item)| match check_label(&item.label, cfg, timesteps) {
            Ok(()) => Some(item),
            Err(e) => {
                skipped.push((i, e.to_string()));
                None
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(RecognizerError::InvalidConfig("no trainable items".into()));
    }

    let mut state = TrainState::new(params, cfg);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams<f32>)> = None;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainItem> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let r = train_step(&batch, params, cfg, &mut state)?;
            loss_sum += r.mean_loss * r.used as f64;
            n += r.used;
        }
        let loss = loss_sum / n.max(1) as f64;
        let val_cer = if val.is_empty() {
            None
        } else {
            Some(corpus_cer(params, val, charset)?)
        };
        let log = EpochLog {
            epoch,
            loss,
            val_cer,
            lr: learning_rate_at(cfg.learning_rate, cfg.lr_decay, epoch),
        };
        on_epoch(&log);
        let key = (val_cer.unwrap_or(0.0), loss);
        let better = match &best {
            None => true,
            Some((c, l, _, _)) => key.0 < *c || (key.0 == *c && key.1 < *l),
        };
        if better {
            best = Some((key.0, key.1, epoch, params.clone()));
        }
        logs.push(log);
    }
    let (_, _, best_epoch, best) = best.unwrap_or_else(|| (0.0, 0.0, 0, params.clone()));
    Ok(FitReport {
        best,
        best_epoch,
        epochs: logs,
        skipped,
    })
}
