//! Supervised training: cross-entropy loss, AdamW with decoupled
//! weight decay, a multi-step learning-rate schedule, and the epoch
//! loop with rectification / SMOTE / augmentation hooks.

use crate::data::LabeledDataset;
use crate::model::{SiformerConfig, SiformerParams};
use crate::rectify::{rectify_dataset, ConstraintTable, RectifyConfig};
use crate::rng::{mix, rng_derived};
use crate::sampling::{augment, normalize_dataset, smote_balance, AugmentConfig, SmoteConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub rectify: bool,
    pub augment: bool,
    pub smote: bool,
    /// Attach per-layer classifier heads and train them with summed
    /// auxiliary losses (off by default; the standard path excludes
    /// internal classifiers from training).
    pub train_internal_classifiers: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-8,
            milestones: vec![60, 80],
            gamma: 0.1,
            seed: 0,
            batch_size: 1,
            rectify: true,
            augment: true,
            smote: true,
            train_internal_classifiers: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        if self.milestones.iter().any(|&m| m > self.epochs) {
            return Err(Error::invalid("milestones must lie within [0, epochs]"));
        }
        if !(self.lr0 > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::invalid("lr0 and gamma must be positive"));
        }
        Ok(())
    }
}

/// Stable cross-entropy of a `1 x C` logit row against the class id.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<Tensor> {
    logits.cross_entropy_logits(label)
}

/// Learning rate at `epoch`: lr0 decayed by gamma at each milestone
/// already reached.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.lr0 * cfg.gamma.powi(decays as i32)
}

/// One AdamW update for a single scalar entry. Decoupled weight decay
/// first, then the bias-corrected moment update. Returns the new
/// (theta, m, v).
pub fn adamw_update(
    theta: f64,
    grad: f64,
    m: f64,
    v: f64,
    t: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
) -> (f64, f64, f64) {
    let theta = theta - lr * weight_decay * theta;
    let m = beta1 * m + (1.0 - beta1) * grad;
    let v = beta2 * v + (1.0 - beta2) * grad * grad;
    let m_hat = m / (1.0 - beta1.powi(t as i32));
    let v_hat = v / (1.0 - beta2.powi(t as i32));
    (theta - lr * m_hat / (v_hat.sqrt() + ADAM_EPS), m, v)
}

/// Optimizer state for one parameter list (first and second moments
/// per scalar, shared step counter).
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
    t: usize,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &[(String, Tensor)]) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            weight_decay: cfg.weight_decay,
            moments: params
                .iter()
                .map(|(_, p)| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect(),
            t: 0,
        }
    }

    /// Applies one step over every parameter, reading gradients off the
    /// tensors (scaled by `grad_scale`, e.g. 1/batch). Parameters
    /// without gradients are treated as zero-gradient.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64, grad_scale: f64) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::invalid("optimizer state does not match parameter list"));
        }
        self.t += 1;
        for ((_, param), (m, v)) in params.iter().zip(&mut self.moments) {
            let grad = param.grad();
            let mut data = param.value().data;
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g.data[i]) * grad_scale;
                if !g.is_finite() {
                    return Err(Error::NonFinite("adamw gradient"));
                }
                let (theta, nm, nv) = adamw_update(
                    data[i],
                    g,
                    m[i],
                    v[i],
                    self.t,
                    lr,
                    self.beta1,
                    self.beta2,
                    self.weight_decay,
                );
                data[i] = theta;
                m[i] = nm;
                v[i] = nv;
            }
            param.set_data(&data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub params: SiformerParams,
    pub history: TrainHistory,
    /// Per-sequence preprocessing that evaluation must replay.
    pub recipe: crate::model::PreprocessRecipe,
}

/// Preprocessing knobs used when the corresponding toggle in
/// [`TrainConfig`] is on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub rectify: RectifyConfig,
    pub smote: SmoteConfig,
    pub augment: AugmentConfig,
}

/// Full training run: optional rectification, part normalization,
/// optional SMOTE balancing, then the epoch loop (per-sample
/// augmentation, forward, loss, backward, AdamW). Deterministic for a
/// fixed (dataset, configs, seed).
pub fn train(
    ds: &LabeledDataset,
    model_cfg: &SiformerConfig,
    cfg: &TrainConfig,
    pre: &PreprocessConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let frames = ds.sequences[0].frames();
    if ds.sequences.iter().any(|s| s.frames() != frames) {
        return Err(Error::invalid("training data must be frame-padded to a uniform length"));
    }
    if ds.sequences.iter().any(|s| s.label.is_none()) {
        return Err(Error::invalid("every training sequence must be labeled"));
    }
    if frames > model_cfg.max_frames {
        return Err(Error::invalid(format!(
            "dataset has {frames} frames but the model supports max_frames {}",
            model_cfg.max_frames
        )));
    }

    let mut data = if cfg.rectify {
        let (fixed, _) = rectify_dataset(ds, &pre.rectify, &ConstraintTable::default())?;
        fixed
    } else {
        ds.clone()
    };
    data = normalize_dataset(&data)?;
    if cfg.smote {
        data = smote_balance(&data, &pre.smote)?;
    }

    let mut params = SiformerParams::init(model_cfg, cfg.seed)?;
    if cfg.train_internal_classifiers {
        params.attach_internal_classifiers(mix(cfg.seed, 0xc1a5));
    }
    let named = params.named_params();
    let mut optimizer = AdamW::new(cfg, &named);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut shuffle_rng = rng_derived(cfg.seed, mix(0x7368, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grad();
            for &idx in batch {
                let sample = &data.sequences[idx];
                let sample = if cfg.augment {
                    augment(sample, &pre.augment, mix(epoch as u64, idx as u64))?
                } else {
                    sample.clone()
                };
                let label = sample.label.expect("training sample must be labeled");
                let pass = params.forward(&sample)?;
                let mut loss = cross_entropy(&pass.logits, label)?;
                if let Some(internal) = &params.internal {
                    for (l, head) in internal.encoder.iter().enumerate() {
                        let pooled = pooled_encoder_state(&pass, l)?;
                        loss = loss.add(&cross_entropy(&pooled.matmul(head)?, label)?)?;
                    }
                    for (l, head) in internal.decoder.iter().enumerate() {
                        let state = &pass.decoder_states[l];
                        loss = loss.add(&cross_entropy(&state.matmul(head)?, label)?)?;
                    }
                }
                let loss_value = loss.item();
                if !loss_value.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                loss_sum += loss_value;
                if pass.predicted_class() == label {
                    correct += 1;
                }
                loss.backward()?;
            }
            optimizer.step(&named, lr, 1.0 / batch.len() as f64)?;
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            lr,
        });
    }

    Ok(TrainOutcome {
        params,
        history,
        recipe: crate::model::PreprocessRecipe {
            rectify: cfg.rectify.then_some(pre.rectify),
        },
    })
}

/// Hidden state for encoder-site internal classification at `layer`:
/// token-mean over valid rows of the row-concatenated per-stream
/// outputs.
pub fn pooled_encoder_state(pass: &crate::model::ForwardPass, layer: usize) -> Result<Tensor> {
    let states: Vec<Tensor> = pass
        .encoder_layers
        .iter()
        .map(|layers| layers[layer].clone())
        .collect();
    if states.is_empty() {
        return Err(Error::invalid("forward pass has no encoder layers"));
    }
    let concat = Tensor::concat_rows(&states)?;
    let mut mask = Vec::with_capacity(concat.rows());
    for stream_masks in &pass.encoder_masks {
        mask.extend_from_slice(&stream_masks[layer]);
    }
    concat.mean_rows_masked(&mask)
}

#[cfg(test)]
mod tests;
