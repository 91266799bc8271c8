//! Input-adaptive inference: per-layer internal classifiers feed a
//! patience counter; when the same class is predicted enough times in
//! a row, inference halts and downstream layers are never executed.
//! Also hosts dataset evaluation and the missing-keypoint robustness
//! sweep.

use crate::data::{remove_keypoints, LabeledDataset, Part, SkeletalSequence};
use crate::model::{argmax, count_flops, fuse, ExitPoint, SiformerParams};
use crate::rng::{mix, rng_from};
use crate::tensor::{Matrix, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitSite {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Seeded random linear maps, fixed across calls and processes.
    Fresh,
    /// Heads stored in the checkpoint (trained alongside the model).
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyExitConfig {
    /// Consecutive agreements required to halt; `None` disables early
    /// exit entirely.
    pub patience: Option<usize>,
    pub site: ExitSite,
    pub classifier_mode: ClassifierMode,
    pub seed: u64,
}

impl Default for EarlyExitConfig {
    fn default() -> Self {
        EarlyExitConfig {
            patience: Some(1),
            site: ExitSite::Encoder,
            classifier_mode: ClassifierMode::Fresh,
            seed: 0,
        }
    }
}

impl EarlyExitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1 (or off)"));
        }
        Ok(())
    }

    pub fn off() -> Self {
        EarlyExitConfig { patience: None, ..EarlyExitConfig::default() }
    }
}

/// A deterministic d -> C linear map for layer `layer` of `site`;
/// a pure function of (seed, site, layer, d, classes).
pub fn fresh_classifier(seed: u64, site: ExitSite, layer: usize, d: usize, classes: usize) -> Matrix {
    let site_salt = match site {
        ExitSite::Encoder => 0x656e_63,
        ExitSite::Decoder => 0x6465_63,
    };
    let mut rng = rng_from(mix(mix(seed, site_salt), layer as u64));
    let bound = 1.0 / (d as f64).sqrt();
    let mut m = Matrix::zeros(d, classes);
    for v in &mut m.data {
        *v = rand::Rng::gen_range(&mut rng, -bound..=bound);
    }
    m
}

/// Applies an internal classifier to a `1 x d` hidden state; ties
/// break toward the lower class index.
pub fn internal_classify(hidden: &Matrix, classifier: &Matrix) -> Result<usize> {
    if hidden.rows != 1 || hidden.cols != classifier.rows {
        return Err(Error::ShapeMismatch {
            op: "internal_classify",
            left: vec![hidden.rows, hidden.cols],
            right: vec![classifier.rows, classifier.cols],
        });
    }
    let mut scores = vec![0.0; classifier.cols];
    for (i, &h) in hidden.data.iter().enumerate() {
        for c in 0..classifier.cols {
            scores[c] += h * classifier.get(i, c);
        }
    }
    Ok(argmax(&scores))
}

/// The patience counter: increments while consecutive layer
/// predictions agree, resets to zero on disagreement and at the first
/// layer.
pub fn patience_update(cnt_prev: usize, y_i: usize, y_prev: Option<usize>, i: usize) -> usize {
    if i == 1 {
        return 0;
    }
    match y_prev {
        Some(prev) if prev == y_i => cnt_prev + 1,
        _ => 0,
    }
}

/// Incremental halting decision shared by both exit sites.
struct PatienceTracker {
    patience: Option<usize>,
    cnt: usize,
    prev: Option<usize>,
    layer: usize,
    predictions: Vec<usize>,
    counters: Vec<usize>,
}

impl PatienceTracker {
    fn new(patience: Option<usize>) -> Self {
        PatienceTracker {
            patience,
            cnt: 0,
            prev: None,
            layer: 0,
            predictions: Vec::new(),
            counters: Vec::new(),
        }
    }

    /// Records the next layer prediction; true means halt now.
    fn observe(&mut self, y: usize) -> bool {
        self.layer += 1;
        self.cnt = patience_update(self.cnt, y, self.prev, self.layer);
        self.prev = Some(y);
        self.predictions.push(y);
        self.counters.push(self.cnt);
        match self.patience {
            Some(p) => self.cnt >= p,
            None => false,
        }
    }
}

/// Per-instance record of the adaptive path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitTrace {
    pub site: ExitSite,
    /// Internal predictions per evaluated layer.
    pub predictions: Vec<usize>,
    /// Patience counter after each evaluated layer.
    pub counters: Vec<usize>,
    /// 1-based layer at which inference halted; None means the full
    /// path ran.
    pub exit_layer: Option<usize>,
    pub flops: u64,
    pub wall_time_s: f64,
    pub label: usize,
}

fn classifier_for(
    params: &SiformerParams,
    cfg: &EarlyExitConfig,
    site: ExitSite,
    layer: usize,
) -> Result<Matrix> {
    match cfg.classifier_mode {
        ClassifierMode::Fresh => Ok(fresh_classifier(
            cfg.seed,
            site,
            layer,
            params.config.d_model,
            params.config.num_classes,
        )),
        ClassifierMode::Trained => {
            let internal = params.internal.as_ref().ok_or_else(|| {
                Error::invalid("checkpoint has no trained internal classifiers")
            })?;
            let heads = match site {
                ExitSite::Encoder => &internal.encoder,
                ExitSite::Decoder => &internal.decoder,
            };
            heads
                .get(layer)
                .map(Tensor::value)
                .ok_or_else(|| Error::invalid(format!("no internal classifier for layer {layer}")))
        }
    }
}

/// Token-mean over valid rows of the concatenated per-stream states.
fn pooled_state(states: &[Tensor], masks: &[Vec<bool>]) -> Result<Matrix> {
    let concat = Tensor::concat_rows(states)?;
    let mut mask = Vec::with_capacity(concat.rows());
    for m in masks {
        mask.extend_from_slice(m);
    }
    Ok(concat.mean_rows_masked(&mask)?.value())
}

/// Runs the adaptive path over one sequence. Layers beyond the exit
/// point (and, for encoder-site exits, the whole decoder) are never
/// executed; FLOPs are the analytic count of the executed prefix.
pub fn infer_adaptive(
    seq: &SkeletalSequence,
    params: &SiformerParams,
    exit_cfg: &EarlyExitConfig,
) -> Result<(usize, ExitTrace)> {
    exit_cfg.validate()?;
    let cfg = &params.config;
    let start = Instant::now();
    let mut tracker = PatienceTracker::new(exit_cfg.patience);
    let frames = seq.valid_frames.max(1);

    let (inputs, mask) = params.stream_inputs(seq);
    let n_streams = inputs.len();
    let mut states: Vec<Tensor> = Vec::with_capacity(n_streams);
    let mut masks: Vec<Vec<bool>> = vec![mask.clone(); n_streams];
    for input in &inputs {
        // Projection + positional encoding per stream.
        let idx = states.len();
        let stream = &params.streams[idx];
        let projected = input.matmul(&stream.input_w)?.add_row(&stream.input_b)?;
        states.push(crate::attention::positional_encode(&projected, &stream.positional)?);
    }

    // Encoder stack, layer by layer across all streams.
    for l in 0..cfg.encoder_layers {
        let mut next_states = Vec::with_capacity(n_streams);
        for s in 0..n_streams {
            let (out, _) = params.encoder_layer(s, l, &states[s], &masks[s])?;
            next_states.push(out);
        }
        states = next_states;

        if exit_cfg.site == ExitSite::Encoder {
            let pooled = pooled_state(&states, &masks)?;
            let head = classifier_for(params, exit_cfg, ExitSite::Encoder, l)?;
            let y = internal_classify(&pooled, &head)?;
            if tracker.observe(y) {
                let flops = count_flops(cfg, frames, Some(ExitPoint::Encoder(l + 1)))?;
                return Ok((
                    y,
                    ExitTrace {
                        site: exit_cfg.site,
                        predictions: tracker.predictions,
                        counters: tracker.counters,
                        exit_layer: Some(l + 1),
                        flops,
                        wall_time_s: start.elapsed().as_secs_f64(),
                        label: y,
                    },
                ));
            }
        }

        if cfg.distilling && l + 1 < cfg.encoder_layers {
            for s in 0..n_streams {
                let (dx, dmask) = params.apply_distill(s, l, &states[s], &masks[s])?;
                states[s] = dx;
                masks[s] = dmask;
            }
        }
    }

    // Decoder path.
    let fused = fuse(&states)?;
    let mut fused_mask = Vec::new();
    for m in &masks {
        fused_mask.extend_from_slice(m);
    }
    let mut query = params.class_query.clone();
    for l in 0..cfg.decoder_layers {
        let (next, _) = params.decoder_layer(l, &query, &fused, &fused_mask)?;
        query = next;

        if exit_cfg.site == ExitSite::Decoder {
            let head = classifier_for(params, exit_cfg, ExitSite::Decoder, l)?;
            let y = internal_classify(&query.value(), &head)?;
            if tracker.observe(y) {
                let flops = count_flops(cfg, frames, Some(ExitPoint::Decoder(l + 1)))?;
                return Ok((
                    y,
                    ExitTrace {
                        site: exit_cfg.site,
                        predictions: tracker.predictions,
                        counters: tracker.counters,
                        exit_layer: Some(l + 1),
                        flops,
                        wall_time_s: start.elapsed().as_secs_f64(),
                        label: y,
                    },
                ));
            }
        }
    }

    let logits = params.classify(&query)?;
    let label = argmax(&logits.value().data);
    let flops = count_flops(cfg, frames, None)?;
    Ok((
        label,
        ExitTrace {
            site: exit_cfg.site,
            predictions: tracker.predictions,
            counters: tracker.counters,
            exit_layer: None,
            flops,
            wall_time_s: start.elapsed().as_secs_f64(),
            label,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    pub top1: f64,
    pub avg_wall_time_s: f64,
    pub avg_flops: f64,
    pub param_count: usize,
    pub early_exit_count: usize,
}

/// Per-instance adaptive inference over a labeled dataset.
pub fn evaluate(
    ds: &LabeledDataset,
    params: &SiformerParams,
    exit_cfg: &EarlyExitConfig,
) -> Result<(EvalMetrics, Vec<ExitTrace>)> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty dataset"));
    }
    let mut correct = 0usize;
    let mut traces = Vec::with_capacity(ds.len());
    let mut flops_sum = 0u64;
    let mut time_sum = 0.0;
    for (i, seq) in ds.sequences.iter().enumerate() {
        let label = seq
            .label
            .ok_or_else(|| Error::invalid(format!("sequence {i} is unlabeled")))?;
        let (pred, trace) = infer_adaptive(seq, params, exit_cfg)?;
        if pred == label {
            correct += 1;
        }
        flops_sum += trace.flops;
        time_sum += trace.wall_time_s;
        traces.push(trace);
    }
    let n = ds.len() as f64;
    let early_exit_count = traces
        .iter()
        .filter(|t| is_early_exit(t, &params.config))
        .count();
    Ok((
        EvalMetrics {
            samples: ds.len(),
            top1: correct as f64 / n,
            avg_wall_time_s: time_sum / n,
            avg_flops: flops_sum as f64 / n,
            param_count: params.param_count(),
            early_exit_count,
        },
        traces,
    ))
}

/// An instance counts as an early exit when it traversed fewer layers
/// than the full path: any encoder-site exit skips the decoder stack,
/// while a decoder-site exit at the final layer only skips the head.
pub fn is_early_exit(trace: &ExitTrace, cfg: &crate::model::SiformerConfig) -> bool {
    match (trace.site, trace.exit_layer) {
        (_, None) => false,
        (ExitSite::Encoder, Some(_)) => true,
        (ExitSite::Decoder, Some(layer)) => layer < cfg.decoder_layers,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub part: String,
    pub removed: usize,
    pub seed: u64,
    pub top1: f64,
}

/// Accuracy under increasing keypoint removal: for every part, every
/// k in `0..=part_size` and every sweep seed, zeroes k keypoints of
/// that part in each raw test sequence (per-sequence derived seeds),
/// replays the checkpoint's preprocessing recipe, and records top-1
/// accuracy.
pub fn robustness_sweep(
    raw_ds: &LabeledDataset,
    params: &SiformerParams,
    recipe: &crate::model::PreprocessRecipe,
    exit_cfg: &EarlyExitConfig,
    parts: &[Part],
    seeds: &[u64],
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for &part in parts {
        for k in 0..=part.size() {
            for &seed in seeds {
                let sequences = raw_ds
                    .sequences
                    .iter()
                    .enumerate()
                    .map(|(i, seq)| remove_keypoints(seq, part, k, mix(seed, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                let occluded =
                    recipe.apply(&LabeledDataset::new(sequences, raw_ds.num_classes)?)?;
                let (metrics, _) = evaluate(&occluded, params, exit_cfg)?;
                rows.push(RobustnessRow {
                    part: part.name().to_string(),
                    removed: k,
                    seed,
                    top1: metrics.top1,
                });
            }
        }
    }
    Ok(rows)
}
