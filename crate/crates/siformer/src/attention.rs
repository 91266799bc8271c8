//! Attention primitives: exact scaled dot-product attention, the
//! ProbSparse variant that grants exact attention only to the top-u
//! queries under the max-minus-mean sparsity measure, multi-head
//! wrappers, positional encodings, and the optional distilling layer.

use crate::rng::{mix, rng_derived};
use crate::tensor::{Matrix, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnMode {
    Full,
    ProbSparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub d_model: usize,
    pub mode: AttnMode,
    /// Sampling factor `c`: both the exact-query budget `u` and the
    /// per-query key-sample budget are `ceil(c * ln L)`.
    pub sampling_factor: f64,
    pub seed: u64,
    pub use_padding_mask: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(self.sampling_factor > 0.0) {
            return Err(Error::invalid("sampling_factor must be positive"));
        }
        Ok(())
    }
}

/// Instrumentation: how many query-key dot products were actually
/// formed. Full attention computes `L_Q * L_K`; ProbSparse computes at
/// most `L_Q * U + u * L_K`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttnStats {
    pub score_pairs: usize,
}

impl AttnStats {
    pub fn absorb(&mut self, other: AttnStats) {
        self.score_pairs += other.score_pairs;
    }
}

fn check_attention_shapes(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&[bool]>) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention q/k",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if v.rows() != k.rows() {
        return Err(Error::ShapeMismatch {
            op: "attention k/v",
            left: k.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    if let Some(mask) = mask {
        if mask.len() != k.rows() {
            return Err(Error::ShapeMismatch {
                op: "attention mask",
                left: vec![k.rows()],
                right: vec![mask.len()],
            });
        }
    }
    Ok(())
}

/// Exact attention: softmax(Q Kᵀ / √d) V with masked keys excluded
/// from the softmax. Every output row is a convex combination of the
/// unmasked V rows.
pub fn full_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&[bool]>,
) -> Result<(Tensor, AttnStats)> {
    check_attention_shapes(q, k, v, mask)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul(&k.transpose())?.scale(scale);
    let probs = scores.softmax_rows_masked(mask)?;
    let out = probs.matmul(v)?;
    Ok((out, AttnStats { score_pairs: q.rows() * k.rows() }))
}

/// The sparsity measurement: for each query, sample `sample_count`
/// keys uniformly without replacement (seeded) and score
/// `max_j(q·k_j/√d) - mean_j(q·k_j/√d)` over the sample. Always
/// non-negative; unsampled pairs are never formed.
pub fn sparsity_scores(
    q: &Tensor,
    k: &Tensor,
    sample_count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if q.cols() != k.cols() {
        return Err(Error::ShapeMismatch {
            op: "sparsity_scores",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if sample_count == 0 || sample_count > k.rows() {
        return Err(Error::invalid(format!(
            "sample_count {} outside [1, {}]",
            sample_count,
            k.rows()
        )));
    }
    let qm = q.value();
    let km = k.value();
    let all_rows: Vec<usize> = (0..qm.rows).collect();
    let all_keys: Vec<usize> = (0..km.rows).collect();
    Ok(sparsity_scores_over(&qm, &km, &all_rows, &all_keys, sample_count, seed).0)
}

/// Core of the measurement over explicit query/key row subsets; key
/// samples are drawn by position within `key_rows` so the result is
/// independent of how much padding surrounds the valid region.
fn sparsity_scores_over(
    q: &Matrix,
    k: &Matrix,
    query_rows: &[usize],
    key_rows: &[usize],
    sample_count: usize,
    seed: u64,
) -> (Vec<f64>, usize) {
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut out = Vec::with_capacity(query_rows.len());
    let mut pairs = 0;
    for (pos, &qi) in query_rows.iter().enumerate() {
        let mut rng = rng_derived(mix(seed, 0x7370_6172), pos as u64);
        let picks = rand::seq::index::sample(&mut rng, key_rows.len(), sample_count);
        let qrow = q.row(qi);
        let mut maxv = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for p in picks.iter() {
            let krow = k.row(key_rows[p]);
            let dot: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
            maxv = maxv.max(dot);
            sum += dot;
        }
        pairs += sample_count;
        // max >= mean holds exactly in reals; clamp the float residue.
        out.push((maxv - sum / sample_count as f64).max(0.0));
    }
    (out, pairs)
}

fn budget(c: f64, len: usize) -> usize {
    if len == 0 {
        return 0;
    }
    let raw = (c * (len as f64).ln()).ceil() as usize;
    raw.clamp(1, len)
}

/// ProbSparse attention: the top-u queries by sparsity score receive
/// exact attention rows; every other query's output is the mean of the
/// unmasked V rows (the softmax image of an all-zero score row). Ties
/// in the measure break toward the lower query index.
///
/// `mask` marks valid keys; in the self-attention case (`L_Q == L_K`)
/// it also marks valid queries, which keeps outputs on valid rows
/// independent of trailing padding.
pub fn probsparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &AttentionConfig,
    mask: Option<&[bool]>,
) -> Result<(Tensor, AttnStats)> {
    cfg.validate()?;
    check_attention_shapes(q, k, v, mask)?;
    let l_q = q.rows();
    let l_k = k.rows();

    let key_rows: Vec<usize> = match mask {
        Some(m) => (0..l_k).filter(|&j| m[j]).collect(),
        None => (0..l_k).collect(),
    };
    if key_rows.is_empty() {
        return Err(Error::AllKeysMasked(0));
    }
    let query_rows: Vec<usize> = match mask {
        Some(m) if l_q == l_k => (0..l_q).filter(|&i| m[i]).collect(),
        _ => (0..l_q).collect(),
    };

    let u_exact = budget(cfg.sampling_factor, query_rows.len());
    let u_samples = budget(cfg.sampling_factor, key_rows.len());

    let qm = q.value();
    let km = k.value();
    let (measure, sample_pairs) =
        sparsity_scores_over(&qm, &km, &query_rows, &key_rows, u_samples, cfg.seed);

    let mut ranked: Vec<usize> = (0..query_rows.len()).collect();
    ranked.sort_by(|&a, &b| measure[b].total_cmp(&measure[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = ranked[..u_exact].iter().map(|&p| query_rows[p]).collect();
    selected.sort_unstable();

    let fill = v.mean_rows_masked(&row_flags(l_k, &key_rows))?;
    let q_sel = q.gather_rows(&selected)?;
    let (att_sel, _) = full_attention(&q_sel, k, v, mask)?;
    let out = att_sel.assemble_rows(&selected, &fill, l_q)?;
    Ok((
        out,
        AttnStats { score_pairs: sample_pairs + selected.len() * l_k },
    ))
}

fn row_flags(total: usize, active: &[usize]) -> Vec<bool> {
    let mut flags = vec![false; total];
    for &r in active {
        flags[r] = true;
    }
    flags
}

/// Per-head projection weights plus the shared output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadWeights {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
    pub w_o: Tensor,
}

impl MultiHeadWeights {
    fn validate(&self, cfg: &AttentionConfig) -> Result<()> {
        let d = cfg.d_model;
        let d_h = d / cfg.num_heads;
        for group in [&self.w_q, &self.w_k, &self.w_v] {
            if group.len() != cfg.num_heads {
                return Err(Error::invalid(format!(
                    "expected {} head projections, got {}",
                    cfg.num_heads,
                    group.len()
                )));
            }
            for w in group {
                if w.shape() != [d, d_h] {
                    return Err(Error::ShapeMismatch {
                        op: "multi_head projection",
                        left: w.shape().to_vec(),
                        right: vec![d, d_h],
                    });
                }
            }
        }
        if self.w_o.shape() != [d, d] {
            return Err(Error::ShapeMismatch {
                op: "multi_head output projection",
                left: self.w_o.shape().to_vec(),
                right: vec![d, d],
            });
        }
        Ok(())
    }
}

fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    let transposed: Vec<Tensor> = parts.iter().map(Tensor::transpose).collect();
    Ok(Tensor::concat_rows(&transposed)?.transpose())
}

/// Projects, attends per head (full or ProbSparse per config),
/// concatenates head outputs and applies the output projection.
pub fn multi_head(
    x_q: &Tensor,
    x_kv: &Tensor,
    weights: &MultiHeadWeights,
    cfg: &AttentionConfig,
    mask: Option<&[bool]>,
) -> Result<(Tensor, AttnStats)> {
    cfg.validate()?;
    weights.validate(cfg)?;
    let mask = if cfg.use_padding_mask { mask } else { None };
    let mut stats = AttnStats::default();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let q = x_q.matmul(&weights.w_q[h])?;
        let k = x_kv.matmul(&weights.w_k[h])?;
        let v = x_kv.matmul(&weights.w_v[h])?;
        let head_cfg = AttentionConfig { seed: mix(cfg.seed, h as u64), ..*cfg };
        let (out, s) = match cfg.mode {
            AttnMode::Full => full_attention(&q, &k, &v, mask)?,
            AttnMode::ProbSparse => probsparse_attention(&q, &k, &v, &head_cfg, mask)?,
        };
        stats.absorb(s);
        heads.push(out);
    }
    let merged = concat_cols(&heads)?;
    Ok((merged.matmul(&weights.w_o)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalMode {
    FrameWise,
    ElementWise,
    AbsoluteSinusoidal,
}

/// Positional values added to the embedded sequence.
///
/// Frame-wise keeps one learnable value per frame index, broadcast
/// across features, so every feature within a frame shares the same
/// positional value by construction. Element-wise is the transpose
/// arrangement; the absolute variant is the fixed sinusoid table.
#[derive(Debug, Clone)]
pub enum PositionalEncoding {
    FrameWise { per_frame: Tensor },
    ElementWise { per_feature: Tensor },
    AbsoluteSinusoidal,
}

impl PositionalEncoding {
    pub fn mode(&self) -> PositionalMode {
        match self {
            PositionalEncoding::FrameWise { .. } => PositionalMode::FrameWise,
            PositionalEncoding::ElementWise { .. } => PositionalMode::ElementWise,
            PositionalEncoding::AbsoluteSinusoidal => PositionalMode::AbsoluteSinusoidal,
        }
    }
}

/// X + P with the broadcast determined by the encoding mode. Gradients
/// flow into the learnable positional values.
pub fn positional_encode(x: &Tensor, pe: &PositionalEncoding) -> Result<Tensor> {
    match pe {
        PositionalEncoding::FrameWise { per_frame } => {
            if per_frame.cols() != 1 || per_frame.rows() < x.rows() {
                return Err(Error::ShapeMismatch {
                    op: "frame-wise positional encoding",
                    left: x.shape().to_vec(),
                    right: per_frame.shape().to_vec(),
                });
            }
            let rows: Vec<usize> = (0..x.rows()).collect();
            x.add_col(&per_frame.gather_rows(&rows)?)
        }
        PositionalEncoding::ElementWise { per_feature } => x.add_row(per_feature),
        PositionalEncoding::AbsoluteSinusoidal => {
            x.add(&Tensor::constant(sinusoidal_table(x.rows(), x.cols())))
        }
    }
}

/// Fixed sinusoid table: column 2i holds sin(pos / 10000^(2i/d)),
/// column 2i+1 the matching cosine.
pub fn sinusoidal_table(rows: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, d);
    for pos in 0..rows {
        for i in 0..d.div_ceil(2) {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            let angle = pos as f64 * rate;
            m.set(pos, 2 * i, angle.sin());
            if 2 * i + 1 < d {
                m.set(pos, 2 * i + 1, angle.cos());
            }
        }
    }
    m
}

/// Width-3 convolution kernel over the sequence axis, expressed as one
/// d x d matrix per tap.
#[derive(Debug, Clone)]
pub struct DistillWeights {
    pub w_prev: Tensor,
    pub w_center: Tensor,
    pub w_next: Tensor,
}

/// Distilling layer: width-3 convolution along the sequence (zero
/// padded), ELU, then max-pooling with stride 2 and window 3, halving
/// the sequence length to ceil(L/2).
pub fn distill_layer(x: &Tensor, weights: &DistillWeights) -> Result<Tensor> {
    if x.rows() < 2 {
        return Err(Error::invalid("distill_layer needs at least 2 rows"));
    }
    let conv = x
        .shift_rows(1)
        .matmul(&weights.w_prev)?
        .add(&x.matmul(&weights.w_center)?)?
        .add(&x.shift_rows(-1).matmul(&weights.w_next)?)?;
    conv.elu().max_pool_rows()
}
