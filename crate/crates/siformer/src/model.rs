//! The feature-isolated transformer: three part encoders over the
//! left hand, right hand and body streams, a token-axis fusion of
//! their feature maps, a single-class-query decoder, and a linear
//! classifier head. Includes analytic FLOPs accounting for the full
//! and early-exited paths.

use crate::attention::{
    multi_head, positional_encode, AttentionConfig, AttnMode, AttnStats, DistillWeights,
    MultiHeadWeights, PositionalEncoding, PositionalMode,
};
use crate::data::{partition_parts, SkeletalSequence, FRAME_WIDTH};
use crate::rng::{mix, rng_from};
use crate::tensor::{Matrix, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiformerConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub left_heads: usize,
    pub right_heads: usize,
    pub body_heads: usize,
    pub decoder_heads: usize,
    pub ffn_dim: usize,
    pub attention_mode: AttnMode,
    pub sampling_factor: f64,
    pub attention_seed: u64,
    pub use_padding_mask: bool,
    pub positional: PositionalMode,
    pub distilling: bool,
    /// When false, a single encoder consumes the full 108-wide frame
    /// (the ablation baseline); the decoder is unchanged.
    pub feature_isolation: bool,
    /// Capacity of the learnable frame-wise positional table.
    pub max_frames: usize,
    pub num_classes: usize,
}

impl Default for SiformerConfig {
    fn default() -> Self {
        SiformerConfig {
            d_model: 108,
            encoder_layers: 3,
            decoder_layers: 2,
            left_heads: 3,
            right_heads: 3,
            body_heads: 2,
            decoder_heads: 6,
            ffn_dim: 216,
            attention_mode: AttnMode::ProbSparse,
            sampling_factor: 5.0,
            attention_seed: 0,
            use_padding_mask: true,
            positional: PositionalMode::FrameWise,
            distilling: false,
            feature_isolation: true,
            max_frames: 204,
            num_classes: 5,
        }
    }
}

/// Descriptor of one encoder stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamDesc {
    pub name: &'static str,
    pub width: usize,
    pub heads: usize,
}

impl SiformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("d_model and ffn_dim must be positive"));
        }
        for (name, heads) in [
            ("left", self.left_heads),
            ("right", self.right_heads),
            ("body", self.body_heads),
            ("decoder", self.decoder_heads),
        ] {
            if heads == 0 || self.d_model % heads != 0 {
                return Err(Error::invalid(format!(
                    "d_model {} not divisible by {name} head count {heads}",
                    self.d_model
                )));
            }
        }
        if !(self.sampling_factor > 0.0) {
            return Err(Error::invalid("sampling_factor must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.max_frames == 0 {
            return Err(Error::invalid("max_frames must be positive"));
        }
        Ok(())
    }

    /// The encoder streams: three isolated parts, or one merged stream
    /// covering the whole frame when isolation is ablated.
    pub fn streams(&self) -> Vec<StreamDesc> {
        if self.feature_isolation {
            vec![
                StreamDesc { name: "left", width: 42, heads: self.left_heads },
                StreamDesc { name: "right", width: 42, heads: self.right_heads },
                StreamDesc { name: "body", width: 24, heads: self.body_heads },
            ]
        } else {
            vec![StreamDesc { name: "merged", width: FRAME_WIDTH, heads: self.left_heads }]
        }
    }

    fn attn_config(&self, heads: usize, seed_salt: u64) -> AttentionConfig {
        AttentionConfig {
            num_heads: heads,
            d_model: self.d_model,
            mode: self.attention_mode,
            sampling_factor: self.sampling_factor,
            seed: mix(self.attention_seed, seed_salt),
            use_padding_mask: self.use_padding_mask,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub attn: MultiHeadWeights,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct StreamParams {
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub positional: PositionalEncoding,
    pub layers: Vec<LayerParams>,
    pub distill: Vec<DistillWeights>,
}

/// Per-layer linear maps used when internal classifiers are trained
/// alongside the model (they stay out of the default training path).
#[derive(Debug, Clone)]
pub struct InternalClassifiers {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct SiformerParams {
    pub config: SiformerConfig,
    pub streams: Vec<StreamParams>,
    pub class_query: Tensor,
    pub decoder: Vec<LayerParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub internal: Option<InternalClassifiers>,
}

const LN_EPS: f64 = 1e-5;

fn init_tensor(rows: usize, cols: usize, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::uniform_param(rows, cols, bound, rng)
}

fn init_layer(
    d: usize,
    ffn: usize,
    heads: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> LayerParams {
    let d_h = d / heads;
    let mk_heads = |rng: &mut rand_chacha::ChaCha8Rng| {
        (0..heads).map(|_| init_tensor(d, d_h, d, rng)).collect::<Vec<_>>()
    };
    LayerParams {
        attn: MultiHeadWeights {
            w_q: mk_heads(rng),
            w_k: mk_heads(rng),
            w_v: mk_heads(rng),
            w_o: init_tensor(d, d, d, rng),
        },
        ln1_gamma: Tensor::param(Matrix::from_vec(1, d, vec![1.0; d])),
        ln1_beta: Tensor::param(Matrix::zeros(1, d)),
        ffn_w1: init_tensor(d, ffn, d, rng),
        ffn_b1: init_tensor(1, ffn, d, rng),
        ffn_w2: init_tensor(ffn, d, ffn, rng),
        ffn_b2: init_tensor(1, d, ffn, rng),
        ln2_gamma: Tensor::param(Matrix::from_vec(1, d, vec![1.0; d])),
        ln2_beta: Tensor::param(Matrix::zeros(1, d)),
    }
}

impl SiformerParams {
    /// Fresh randomly-initialized parameters: weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, learnable positional values
    /// uniform in `[0, 1)`.
    pub fn init(config: &SiformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from(mix(seed, 0x7061_7261));
        let d = config.d_model;
        let streams = config
            .streams()
            .into_iter()
            .map(|desc| StreamParams {
                input_w: init_tensor(desc.width, d, desc.width, &mut rng),
                input_b: init_tensor(1, d, desc.width, &mut rng),
                positional: match config.positional {
                    PositionalMode::FrameWise => PositionalEncoding::FrameWise {
                        per_frame: Tensor::uniform01_param(config.max_frames, 1, &mut rng),
                    },
                    PositionalMode::ElementWise => PositionalEncoding::ElementWise {
                        per_feature: Tensor::uniform01_param(1, d, &mut rng),
                    },
                    PositionalMode::AbsoluteSinusoidal => PositionalEncoding::AbsoluteSinusoidal,
                },
                layers: (0..config.encoder_layers)
                    .map(|_| init_layer(d, config.ffn_dim, desc.heads, &mut rng))
                    .collect(),
                distill: if config.distilling {
                    (0..config.encoder_layers.saturating_sub(1))
                        .map(|_| DistillWeights {
                            w_prev: init_tensor(d, d, 3 * d, &mut rng),
                            w_center: init_tensor(d, d, 3 * d, &mut rng),
                            w_next: init_tensor(d, d, 3 * d, &mut rng),
                        })
                        .collect()
                } else {
                    Vec::new()
                },
            })
            .collect();
        Ok(SiformerParams {
            streams,
            class_query: init_tensor(1, d, d, &mut rng),
            decoder: (0..config.decoder_layers)
                .map(|_| init_layer(d, config.ffn_dim, config.decoder_heads, &mut rng))
                .collect(),
            head_w: init_tensor(d, config.num_classes, d, &mut rng),
            head_b: init_tensor(1, config.num_classes, d, &mut rng),
            internal: None,
            config: config.clone(),
        })
    }

    /// Attaches trainable internal classifier heads (one `d x C` map
    /// per encoder layer and per decoder layer).
    pub fn attach_internal_classifiers(&mut self, seed: u64) {
        let d = self.config.d_model;
        let c = self.config.num_classes;
        let mut rng = rng_from(mix(seed, 0x696e_7463));
        self.internal = Some(InternalClassifiers {
            encoder: (0..self.config.encoder_layers)
                .map(|_| init_tensor(d, c, d, &mut rng))
                .collect(),
            decoder: (0..self.config.decoder_layers)
                .map(|_| init_tensor(d, c, d, &mut rng))
                .collect(),
        });
    }

    /// Stable (name, tensor) listing of every learnable parameter.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (desc, stream) in self.config.streams().iter().zip(&self.streams) {
            let p = desc.name;
            out.push((format!("{p}.input_w"), stream.input_w.clone()));
            out.push((format!("{p}.input_b"), stream.input_b.clone()));
            match &stream.positional {
                PositionalEncoding::FrameWise { per_frame } => {
                    out.push((format!("{p}.positional"), per_frame.clone()));
                }
                PositionalEncoding::ElementWise { per_feature } => {
                    out.push((format!("{p}.positional"), per_feature.clone()));
                }
                PositionalEncoding::AbsoluteSinusoidal => {}
            }
            for (l, layer) in stream.layers.iter().enumerate() {
                push_layer_params(&mut out, &format!("{p}.enc{l}"), layer);
            }
            for (g, dw) in stream.distill.iter().enumerate() {
                out.push((format!("{p}.distill{g}.prev"), dw.w_prev.clone()));
                out.push((format!("{p}.distill{g}.center"), dw.w_center.clone()));
                out.push((format!("{p}.distill{g}.next"), dw.w_next.clone()));
            }
        }
        out.push(("class_query".to_string(), self.class_query.clone()));
        for (l, layer) in self.decoder.iter().enumerate() {
            push_layer_params(&mut out, &format!("dec{l}"), layer);
        }
        out.push(("head_w".to_string(), self.head_w.clone()));
        out.push(("head_b".to_string(), self.head_b.clone()));
        if let Some(internal) = &self.internal {
            for (l, t) in internal.encoder.iter().enumerate() {
                out.push((format!("internal.enc{l}"), t.clone()));
            }
            for (l, t) in internal.decoder.iter().enumerate() {
                out.push((format!("internal.dec{l}"), t.clone()));
            }
        }
        out
    }

    /// Total scalar parameter count; a pure function of the config
    /// (and of whether internal classifiers are attached).
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.named_params() {
            t.zero_grad();
        }
    }
}

fn push_layer_params(out: &mut Vec<(String, Tensor)>, prefix: &str, layer: &LayerParams) {
    for (h, w) in layer.attn.w_q.iter().enumerate() {
        out.push((format!("{prefix}.wq{h}"), w.clone()));
    }
    for (h, w) in layer.attn.w_k.iter().enumerate() {
        out.push((format!("{prefix}.wk{h}"), w.clone()));
    }
    for (h, w) in layer.attn.w_v.iter().enumerate() {
        out.push((format!("{prefix}.wv{h}"), w.clone()));
    }
    out.push((format!("{prefix}.wo"), layer.attn.w_o.clone()));
    out.push((format!("{prefix}.ln1_g"), layer.ln1_gamma.clone()));
    out.push((format!("{prefix}.ln1_b"), layer.ln1_beta.clone()));
    out.push((format!("{prefix}.ffn_w1"), layer.ffn_w1.clone()));
    out.push((format!("{prefix}.ffn_b1"), layer.ffn_b1.clone()));
    out.push((format!("{prefix}.ffn_w2"), layer.ffn_w2.clone()));
    out.push((format!("{prefix}.ffn_b2"), layer.ffn_b2.clone()));
    out.push((format!("{prefix}.ln2_g"), layer.ln2_gamma.clone()));
    out.push((format!("{prefix}.ln2_b"), layer.ln2_beta.clone()));
}

/// Row-axis concatenation of per-part feature maps; values are moved,
/// never mixed.
pub fn fuse(parts: &[Tensor]) -> Result<Tensor> {
    Tensor::concat_rows(parts)
}

/// One residual transformer block (post-norm) around the given
/// attention output.
fn encoder_block(
    x: &Tensor,
    layer: &LayerParams,
    attended: Tensor,
) -> Result<Tensor> {
    let x1 = x.add(&attended)?.layer_norm_rows(&layer.ln1_gamma, &layer.ln1_beta, LN_EPS)?;
    let hidden = x1.matmul(&layer.ffn_w1)?.add_row(&layer.ffn_b1)?.relu();
    let ffn = hidden.matmul(&layer.ffn_w2)?.add_row(&layer.ffn_b2)?;
    x1.add(&ffn)?.layer_norm_rows(&layer.ln2_gamma, &layer.ln2_beta, LN_EPS)
}

/// Output of one encoder stream: the embedded input plus every layer's
/// hidden state (retained for early exit), with the per-layer validity
/// masks (distilling shortens them).
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub embedded: Tensor,
    pub input_mask: Vec<bool>,
    pub layers: Vec<Tensor>,
    pub masks: Vec<Vec<bool>>,
    pub stats: AttnStats,
}

impl EncodeOutput {
    /// Final feature map (last layer, or the embedding when there are
    /// no layers) with its mask.
    pub fn final_state(&self) -> (&Tensor, &[bool]) {
        match self.layers.last() {
            Some(t) => (t, self.masks.last().unwrap()),
            None => (&self.embedded, &self.input_mask),
        }
    }
}

impl SiformerParams {
    /// Runs one stream's projection, positional encoding and encoder
    /// stack over a `T x width` part input.
    pub fn encode_part(&self, part_input: &Tensor, stream_idx: usize, mask: &[bool]) -> Result<EncodeOutput> {
        let desc = self.config.streams()[stream_idx];
        let stream = &self.streams[stream_idx];
        if part_input.cols() != desc.width {
            return Err(Error::ShapeMismatch {
                op: "encode_part input",
                left: part_input.shape().to_vec(),
                right: vec![part_input.rows(), desc.width],
            });
        }
        if part_input.rows() > self.config.max_frames {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_frames {}",
                part_input.rows(),
                self.config.max_frames
            )));
        }
        let projected = part_input.matmul(&stream.input_w)?.add_row(&stream.input_b)?;
        let embedded = positional_encode(&projected, &stream.positional)?;

        let mut stats = AttnStats::default();
        let mut layers = Vec::with_capacity(self.config.encoder_layers);
        let mut layer_masks = Vec::with_capacity(self.config.encoder_layers);
        let mut x = embedded.clone();
        let mut current_mask = mask.to_vec();
        for l in 0..self.config.encoder_layers {
            let (next, layer_stats) = self.encoder_layer(stream_idx, l, &x, &current_mask)?;
            stats.absorb(layer_stats);
            layers.push(next.clone());
            layer_masks.push(current_mask.clone());
            x = next;
            if self.config.distilling && l + 1 < self.config.encoder_layers {
                let (distilled, dmask) = self.apply_distill(stream_idx, l, &x, &current_mask)?;
                x = distilled;
                current_mask = dmask;
            }
        }
        Ok(EncodeOutput {
            embedded,
            input_mask: mask.to_vec(),
            layers,
            masks: layer_masks,
            stats,
        })
    }

    /// One self-attention + feed-forward block of a stream.
    pub fn encoder_layer(
        &self,
        stream_idx: usize,
        layer_idx: usize,
        x: &Tensor,
        mask: &[bool],
    ) -> Result<(Tensor, AttnStats)> {
        let desc = self.config.streams()[stream_idx];
        let layer = &self.streams[stream_idx].layers[layer_idx];
        let cfg = self
            .config
            .attn_config(desc.heads, mix(stream_idx as u64, layer_idx as u64));
        let (attended, stats) = multi_head(x, x, &layer.attn, &cfg, Some(mask))?;
        Ok((encoder_block(x, layer, attended)?, stats))
    }

    pub(crate) fn apply_distill(
        &self,
        stream_idx: usize,
        gap_idx: usize,
        x: &Tensor,
        mask: &[bool],
    ) -> Result<(Tensor, Vec<bool>)> {
        let weights = &self.streams[stream_idx].distill[gap_idx];
        let out = crate::attention::distill_layer(x, weights)?;
        // A pooled frame is valid when any frame in its window was.
        let mut pooled_mask = Vec::with_capacity(out.rows());
        for t in 0..out.rows() {
            let center = 2 * t as i64;
            let mut any = false;
            for off in -1..=1i64 {
                let r = center + off;
                if r >= 0 && (r as usize) < mask.len() && mask[r as usize] {
                    any = true;
                }
            }
            pooled_mask.push(any);
        }
        Ok((out, pooled_mask))
    }

    /// One decoder block: the class query cross-attends to the fused
    /// map. A single query makes sparse selection degenerate, so the
    /// decoder always uses exact attention.
    pub fn decoder_layer(
        &self,
        layer_idx: usize,
        query: &Tensor,
        fused_map: &Tensor,
        mask: &[bool],
    ) -> Result<(Tensor, AttnStats)> {
        let layer = &self.decoder[layer_idx];
        let cfg = AttentionConfig {
            mode: AttnMode::Full,
            ..self.config.attn_config(self.config.decoder_heads, mix(0xdec0, layer_idx as u64))
        };
        let (attended, stats) = multi_head(query, fused_map, &layer.attn, &cfg, Some(mask))?;
        Ok((encoder_block(query, layer, attended)?, stats))
    }

    /// Linear head over a `1 x d` state.
    pub fn classify(&self, state: &Tensor) -> Result<Tensor> {
        state.matmul(&self.head_w)?.add_row(&self.head_b)
    }

    /// Runs the class-query decoder over a fused feature map and the
    /// classifier head: per-layer query states, logits, probabilities.
    pub fn decode(&self, fused_map: &Tensor, mask: &[bool]) -> Result<DecodeOutput> {
        let mut stats = AttnStats::default();
        let mut states = Vec::with_capacity(self.config.decoder_layers);
        let mut query = self.class_query.clone();
        for l in 0..self.config.decoder_layers {
            let (next, dstats) = self.decoder_layer(l, &query, fused_map, mask)?;
            stats.absorb(dstats);
            states.push(next.clone());
            query = next;
        }
        let logits = self.classify(&query)?;
        let probs = logits.softmax_rows()?;
        Ok(DecodeOutput { states, logits, probs, stats })
    }
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub states: Vec<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
    pub stats: AttnStats,
}

/// Everything produced by one forward pass. Tensors stay connected to
/// the recorded graph, so a loss built on `logits` backpropagates into
/// the parameters.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Per stream: embedded input.
    pub embedded: Vec<Tensor>,
    /// Per stream, per encoder layer: hidden states.
    pub encoder_layers: Vec<Vec<Tensor>>,
    /// Per stream, per layer: validity masks aligned with the states.
    pub encoder_masks: Vec<Vec<Vec<bool>>>,
    pub fused: Tensor,
    pub fused_mask: Vec<bool>,
    pub decoder_states: Vec<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
    pub stats: AttnStats,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<f64> {
        self.probs.value().data
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.probabilities())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-layer hidden values and derived quantities as plain matrices
/// (no gradient graph): the inspectable record of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub encoder_layers: Vec<Vec<Matrix>>,
    pub encoder_masks: Vec<Vec<Vec<bool>>>,
    pub fused: Matrix,
    pub decoder_states: Vec<Matrix>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub score_pairs: usize,
}

impl ForwardPass {
    pub fn trace(&self) -> ForwardTrace {
        ForwardTrace {
            encoder_layers: self
                .encoder_layers
                .iter()
                .map(|layers| layers.iter().map(Tensor::value).collect())
                .collect(),
            encoder_masks: self.encoder_masks.clone(),
            fused: self.fused.value(),
            decoder_states: self.decoder_states.iter().map(Tensor::value).collect(),
            logits: self.logits.value().data,
            probs: self.probabilities(),
            score_pairs: self.stats.score_pairs,
        }
    }
}

impl SiformerParams {
    /// Splits the sequence into streams and returns the per-stream
    /// input tensors plus the frame validity mask.
    pub fn stream_inputs(&self, seq: &SkeletalSequence) -> (Vec<Tensor>, Vec<bool>) {
        let mask = seq.frame_mask();
        let inputs = if self.config.feature_isolation {
            let (l, r, b) = partition_parts(seq);
            vec![Tensor::constant(l), Tensor::constant(r), Tensor::constant(b)]
        } else {
            let rows = seq.frames();
            vec![Tensor::constant(Matrix::from_vec(
                rows,
                FRAME_WIDTH,
                seq.coords().to_vec(),
            ))]
        };
        (inputs, mask)
    }

    /// Full forward pass: encode each stream, fuse, decode, classify.
    pub fn forward(&self, seq: &SkeletalSequence) -> Result<ForwardPass> {
        let (inputs, mask) = self.stream_inputs(seq);
        let mut stats = AttnStats::default();
        let mut encoded = Vec::with_capacity(inputs.len());
        for (idx, input) in inputs.iter().enumerate() {
            let enc = self.encode_part(input, idx, &mask)?;
            stats.absorb(enc.stats);
            encoded.push(enc);
        }

        let finals: Vec<Tensor> = encoded.iter().map(|e| e.final_state().0.clone()).collect();
        let fused = fuse(&finals)?;
        let mut fused_mask = Vec::new();
        for e in &encoded {
            fused_mask.extend_from_slice(e.final_state().1);
        }

        let decoded = self.decode(&fused, &fused_mask)?;
        stats.absorb(decoded.stats);

        Ok(ForwardPass {
            embedded: encoded.iter().map(|e| e.embedded.clone()).collect(),
            encoder_layers: encoded.iter().map(|e| e.layers.clone()).collect(),
            encoder_masks: encoded.iter().map(|e| e.masks.clone()).collect(),
            fused,
            fused_mask,
            decoder_states: decoded.states,
            logits: decoded.logits,
            probs: decoded.probs,
            stats,
        })
    }
}

/// Where inference stopped, for the FLOPs accounting: layer indices
/// are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitPoint {
    Encoder(usize),
    Decoder(usize),
}

/// Analytic multiply-add count (1 MAC = 2 FLOPs) of the forward path,
/// truncated at `exit` when given.
///
/// Counted: input projections, attention projections, the score/value
/// dot products (`L_Q*L_K*d_h` per head when exact; the sampled budget
/// `(L_Q*U + u*L_K)*d_h` in sparse mode), feed-forward layers, the
/// distilling convolutions, and the classifier head. Elementwise work
/// (softmax, normalization, residuals) is excluded.
pub fn count_flops(cfg: &SiformerConfig, frames: usize, exit: Option<ExitPoint>) -> Result<u64> {
    cfg.validate()?;
    if frames == 0 {
        return Err(Error::invalid("count_flops needs at least one frame"));
    }
    match exit {
        Some(ExitPoint::Encoder(i)) if i == 0 || i > cfg.encoder_layers => {
            return Err(Error::invalid(format!(
                "encoder exit layer {i} outside [1, {}]",
                cfg.encoder_layers
            )));
        }
        Some(ExitPoint::Decoder(i)) if i == 0 || i > cfg.decoder_layers => {
            return Err(Error::invalid(format!(
                "decoder exit layer {i} outside [1, {}]",
                cfg.decoder_layers
            )));
        }
        _ => {}
    }

    let d = cfg.d_model as u64;
    let ffn = cfg.ffn_dim as u64;
    let encoder_depth = match exit {
        Some(ExitPoint::Encoder(i)) => i,
        _ => cfg.encoder_layers,
    };

    let mut macs: u64 = 0;
    let mut final_lengths = Vec::new();
    for desc in cfg.streams() {
        let mut len = frames as u64;
        macs += len * desc.width as u64 * d; // input projection
        for l in 0..encoder_depth {
            let pairs = attention_pairs(cfg, len);
            macs += 3 * len * d * d; // q, k, v projections
            macs += pairs * (d / desc.heads as u64) * desc.heads as u64;
            macs += len * d * d; // output projection
            macs += 2 * len * d * ffn; // feed-forward
            if cfg.distilling && l + 1 < encoder_depth {
                macs += 3 * len * d * d; // width-3 convolution
                len = len.div_ceil(2);
            }
        }
        final_lengths.push(len);
    }

    if matches!(exit, Some(ExitPoint::Encoder(_))) {
        return Ok(2 * macs);
    }

    let l_kv: u64 = final_lengths.iter().sum();
    let decoder_depth = match exit {
        Some(ExitPoint::Decoder(i)) => i,
        _ => cfg.decoder_layers,
    };
    for _ in 0..decoder_depth {
        macs += d * d; // query projection (single token)
        macs += 2 * l_kv * d * d; // key/value projections
        macs += l_kv * d; // scores and value mix for one query
        macs += d * d; // output projection
        macs += 2 * d * ffn;
    }

    if exit.is_none() {
        macs += d * cfg.num_classes as u64; // classifier head
    }
    Ok(2 * macs)
}

fn attention_pairs(cfg: &SiformerConfig, len: u64) -> u64 {
    match cfg.attention_mode {
        AttnMode::Full => len * len,
        AttnMode::ProbSparse => {
            let budget = |l: u64| -> u64 {
                if l == 0 {
                    return 0;
                }
                let raw = (cfg.sampling_factor * (l as f64).ln()).ceil() as u64;
                raw.clamp(1, l)
            };
            let u = budget(len);
            len * u + u * len
        }
    }
}

/// Deterministic per-sequence preprocessing baked into a checkpoint:
/// evaluation must see data shaped the same way training did.
/// Part-based normalization always runs; rectification only when it
/// ran at training time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessRecipe {
    pub rectify: Option<crate::rectify::RectifyConfig>,
}

impl PreprocessRecipe {
    /// Applies the recipe to a dataset (rectify when configured, then
    /// part-based normalization).
    pub fn apply(&self, ds: &crate::data::LabeledDataset) -> Result<crate::data::LabeledDataset> {
        let rectified = match &self.rectify {
            Some(cfg) => {
                crate::rectify::rectify_dataset(ds, cfg, &crate::rectify::ConstraintTable::default())?.0
            }
            None => ds.clone(),
        };
        crate::sampling::normalize_dataset(&rectified)
    }
}

// ---------------------------------------------------------------------
// Checkpoint format: config + preprocessing recipe + named parameter
// arrays as JSON.
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    config: SiformerConfig,
    #[serde(default)]
    preprocess: PreprocessRecipe,
    has_internal_classifiers: bool,
    params: BTreeMap<String, MatrixFile>,
}

pub fn save_checkpoint(
    params: &SiformerParams,
    recipe: &PreprocessRecipe,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = CheckpointFile {
        config: params.config.clone(),
        preprocess: recipe.clone(),
        has_internal_classifiers: params.internal.is_some(),
        params: params
            .named_params()
            .into_iter()
            .map(|(name, t)| {
                let v = t.value();
                (name, MatrixFile { rows: v.rows, cols: v.cols, data: v.data })
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    crate::data::write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(
    path: impl AsRef<std::path::Path>,
) -> Result<(SiformerParams, PreprocessRecipe)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    let mut params = SiformerParams::init(&file.config, 0)?;
    if file.has_internal_classifiers {
        params.attach_internal_classifiers(0);
    }
    let named = params.named_params();
    if named.len() != file.params.len() {
        return Err(Error::Schema(format!(
            "checkpoint has {} parameter arrays, model needs {}",
            file.params.len(),
            named.len()
        )));
    }
    for (name, tensor) in named {
        let stored = file.params.get(&name).ok_or_else(|| {
            Error::Schema(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if [stored.rows, stored.cols] != tensor.shape() || stored.data.len() != tensor.numel() {
            return Err(Error::Schema(format!(
                "parameter '{name}' has shape {}x{}, expected {}x{}",
                stored.rows,
                stored.cols,
                tensor.shape()[0],
                tensor.shape()[1]
            )));
        }
        tensor.set_data(&stored.data);
    }
    Ok((params, file.preprocess))
}
