//! Skeletal sequences: 54 keypoints per frame (21 per hand + 12 upper
//! body), 2-D image-space coordinates. Padded frames are all-zero and
//! tracked through `valid_frames`; missing keypoints are exact (0,0).

mod io;
mod synth;

pub use io::{load_dataset, save_dataset, write_atomic};
pub use synth::{build_hand, generate_synthetic_dataset, HandPose, SynthSpec};

use crate::rng::rng_derived;
use crate::tensor::Matrix;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const HAND_KEYPOINTS: usize = 21;
pub const BODY_KEYPOINTS: usize = 12;
pub const KEYPOINTS: usize = 54;
pub const FRAME_WIDTH: usize = KEYPOINTS * 2;

/// Joint indices within one 21-keypoint hand: wrist first, then the
/// thumb (CMC, MCP, IP, tip), then each finger (MCP, PIP, DIP, tip).
pub mod hand_joint {
    pub const WRIST: usize = 0;
    pub const THUMB_CMC: usize = 1;
    pub const THUMB_MCP: usize = 2;
    pub const THUMB_IP: usize = 3;
    pub const THUMB_TIP: usize = 4;
    pub const INDEX_MCP: usize = 5;
    pub const INDEX_PIP: usize = 6;
    pub const INDEX_DIP: usize = 7;
    pub const INDEX_TIP: usize = 8;
    pub const MIDDLE_MCP: usize = 9;
    pub const MIDDLE_PIP: usize = 10;
    pub const MIDDLE_DIP: usize = 11;
    pub const MIDDLE_TIP: usize = 12;
    pub const RING_MCP: usize = 13;
    pub const RING_PIP: usize = 14;
    pub const RING_DIP: usize = 15;
    pub const RING_TIP: usize = 16;
    pub const LITTLE_MCP: usize = 17;
    pub const LITTLE_PIP: usize = 18;
    pub const LITTLE_DIP: usize = 19;
    pub const LITTLE_TIP: usize = 20;
}

/// Joint indices within the 12-keypoint upper body.
pub mod body_joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const LEFT_EYE: usize = 2;
    pub const RIGHT_EYE: usize = 3;
    pub const LEFT_EAR: usize = 4;
    pub const RIGHT_EAR: usize = 5;
    pub const LEFT_SHOULDER: usize = 6;
    pub const RIGHT_SHOULDER: usize = 7;
    pub const LEFT_ELBOW: usize = 8;
    pub const RIGHT_ELBOW: usize = 9;
    pub const LEFT_WRIST: usize = 10;
    pub const RIGHT_WRIST: usize = 11;
}

/// The three isolated streams. Keypoint ranges are disjoint and cover
/// `[0, 54)` in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    LeftHand,
    RightHand,
    Body,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::LeftHand, Part::RightHand, Part::Body];

    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Part::LeftHand => 0..HAND_KEYPOINTS,
            Part::RightHand => HAND_KEYPOINTS..2 * HAND_KEYPOINTS,
            Part::Body => 2 * HAND_KEYPOINTS..KEYPOINTS,
        }
    }

    pub fn size(self) -> usize {
        self.range().len()
    }

    /// Flattened (x, y interleaved) feature width per frame.
    pub fn feature_width(self) -> usize {
        2 * self.size()
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::LeftHand => "left_hand",
            Part::RightHand => "right_hand",
            Part::Body => "body",
        }
    }
}

impl std::str::FromStr for Part {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "left_hand" => Ok(Part::LeftHand),
            "right" | "right_hand" => Ok(Part::RightHand),
            "body" => Ok(Part::Body),
            other => Err(Error::invalid(format!("unknown part '{other}'"))),
        }
    }
}

/// One gloss sample: `frames x 54 x 2` coordinates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletalSequence {
    frames: usize,
    coords: Vec<f64>,
    pub label: Option<usize>,
    pub valid_frames: usize,
}

impl SkeletalSequence {
    pub fn new(
        frames: usize,
        coords: Vec<f64>,
        label: Option<usize>,
        valid_frames: usize,
    ) -> Result<Self> {
        if coords.len() != frames * FRAME_WIDTH {
            return Err(Error::Schema(format!(
                "expected {} coordinates for {} frames, got {}",
                frames * FRAME_WIDTH,
                frames,
                coords.len()
            )));
        }
        if valid_frames > frames {
            return Err(Error::Schema(format!(
                "valid_frames {valid_frames} exceeds frame count {frames}"
            )));
        }
        let seq = SkeletalSequence { frames, coords, label, valid_frames };
        for t in valid_frames..frames {
            if seq.frame(t).iter().any(|&v| v != 0.0) {
                return Err(Error::Schema(format!(
                    "padded frame {t} contains nonzero coordinates"
                )));
            }
        }
        Ok(seq)
    }

    pub fn zeros(frames: usize, valid_frames: usize, label: Option<usize>) -> Self {
        SkeletalSequence {
            frames,
            coords: vec![0.0; frames * FRAME_WIDTH],
            label,
            valid_frames,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.coords[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.coords[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn xy(&self, t: usize, keypoint: usize) -> (f64, f64) {
        let base = t * FRAME_WIDTH + 2 * keypoint;
        (self.coords[base], self.coords[base + 1])
    }

    pub fn set_xy(&mut self, t: usize, keypoint: usize, x: f64, y: f64) {
        let base = t * FRAME_WIDTH + 2 * keypoint;
        self.coords[base] = x;
        self.coords[base + 1] = y;
    }

    /// Per-frame validity mask derived from `valid_frames`.
    pub fn frame_mask(&self) -> Vec<bool> {
        (0..self.frames).map(|t| t < self.valid_frames).collect()
    }

    /// Flattened coordinate vector (used by SMOTE and the centroid
    /// oracle).
    pub fn flattened(&self) -> &[f64] {
        &self.coords
    }

    /// Extends to `target` frames with all-zero padding.
    pub fn pad_to(&self, target: usize) -> Result<SkeletalSequence> {
        if target < self.frames {
            return Err(Error::invalid(format!(
                "cannot pad {} frames down to {target}",
                self.frames
            )));
        }
        let mut coords = self.coords.clone();
        coords.resize(target * FRAME_WIDTH, 0.0);
        SkeletalSequence::new(target, coords, self.label, self.valid_frames)
    }
}

/// A labeled collection with a fixed class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub sequences: Vec<SkeletalSequence>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(sequences: Vec<SkeletalSequence>, num_classes: usize) -> Result<Self> {
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(label) = seq.label {
                if label >= num_classes {
                    return Err(Error::Schema(format!(
                        "sequence {i} has label {label} outside [0, {num_classes})"
                    )));
                }
            }
        }
        Ok(LabeledDataset { sequences, num_classes })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for c in 0..self.num_classes {
            counts.insert(c, 0);
        }
        for seq in &self.sequences {
            if let Some(label) = seq.label {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn max_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames).max().unwrap_or(0)
    }
}

/// Pads every sequence with trailing all-zero frames up to the longest
/// sequence in the dataset. `valid_frames` is preserved.
pub fn pad_to_max_frames(ds: &LabeledDataset) -> Result<LabeledDataset> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot pad an empty dataset"));
    }
    let target = ds.max_frames();
    let sequences = ds
        .sequences
        .iter()
        .map(|s| s.pad_to(target))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(sequences, ds.num_classes)
}

/// Splits a frame sequence into the three per-part feature matrices
/// (`T x 42`, `T x 42`, `T x 24`), x/y interleaved per keypoint.
pub fn partition_parts(seq: &SkeletalSequence) -> (Matrix, Matrix, Matrix) {
    let t = seq.frames();
    let mut out = Part::ALL.map(|part| Matrix::zeros(t, part.feature_width()));
    for frame in 0..t {
        let row = seq.frame(frame);
        for (slot, part) in Part::ALL.iter().enumerate() {
            let r = part.range();
            let src = &row[2 * r.start..2 * r.end];
            out[slot].data[frame * src.len()..(frame + 1) * src.len()].copy_from_slice(src);
        }
    }
    let [left, right, body] = out;
    (left, right, body)
}

/// Inverse of [`partition_parts`]: reassembles a sequence from the
/// three part matrices, bit-exactly.
pub fn merge_parts(
    left: &Matrix,
    right: &Matrix,
    body: &Matrix,
    label: Option<usize>,
    valid_frames: usize,
) -> Result<SkeletalSequence> {
    let t = left.rows;
    if right.rows != t || body.rows != t {
        return Err(Error::invalid("part matrices disagree on frame count"));
    }
    if left.cols != 42 || right.cols != 42 || body.cols != 24 {
        return Err(Error::invalid("part matrices have unexpected widths"));
    }
    let mut coords = Vec::with_capacity(t * FRAME_WIDTH);
    for frame in 0..t {
        coords.extend_from_slice(left.row(frame));
        coords.extend_from_slice(right.row(frame));
        coords.extend_from_slice(body.row(frame));
    }
    SkeletalSequence::new(t, coords, label, valid_frames)
}

/// Deterministic per-class holdout split: roughly `holdout_frac` of
/// each class (at least one sequence, never the whole class) goes to
/// the second returned dataset.
pub fn split_holdout(
    ds: &LabeledDataset,
    holdout_frac: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
    }
    use rand::seq::SliceRandom;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, seq) in ds.sequences.iter().enumerate() {
        let label = seq
            .label
            .ok_or_else(|| Error::invalid(format!("sequence {i} is unlabeled")))?;
        by_class.entry(label).or_default().push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut members) in by_class {
        let mut rng = rng_derived(seed, 0x7370_6c69 ^ class as u64);
        members.shuffle(&mut rng);
        let held = ((members.len() as f64 * holdout_frac).ceil() as usize)
            .clamp(1, members.len().saturating_sub(1).max(1));
        test_idx.extend_from_slice(&members[..held]);
        train_idx.extend_from_slice(&members[held..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| {
        LabeledDataset::new(
            idx.iter().map(|&i| ds.sequences[i].clone()).collect(),
            ds.num_classes,
        )
    };
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}

/// Zeroes `k` distinct keypoints of `part` (chosen uniformly by the
/// seeded generator) in every frame. All other coordinates are
/// bit-identical to the input.
pub fn remove_keypoints(
    seq: &SkeletalSequence,
    part: Part,
    k: usize,
    rng_seed: u64,
) -> Result<SkeletalSequence> {
    if k > part.size() {
        return Err(Error::invalid(format!(
            "cannot remove {k} keypoints from {} ({} available)",
            part.name(),
            part.size()
        )));
    }
    let mut rng = rng_derived(rng_seed, 0x6b65_7970);
    let chosen = rand::seq::index::sample(&mut rng, part.size(), k);
    let mut out = seq.clone();
    let base = part.range().start;
    for t in 0..seq.frames() {
        for idx in chosen.iter() {
            out.set_xy(t, base + idx, 0.0, 0.0);
        }
    }
    Ok(out)
}
