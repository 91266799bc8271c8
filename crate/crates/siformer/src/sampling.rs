//! Class balancing, part-based normalization and keypoint-space
//! augmentation.

use crate::data::{body_joint, LabeledDataset, Part, SkeletalSequence};
use crate::rng::{mix, rng_from};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k_neighbors: 5, seed: 0 }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::invalid("k_neighbors must be at least 1"));
        }
        Ok(())
    }
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Oversamples every minority class up to the majority count by linear
/// interpolation between a class member and one of its k nearest
/// same-class neighbours (Euclidean distance on flattened sequences).
/// Originals are retained unmodified; synthetics are appended.
pub fn smote_balance(ds: &LabeledDataset, cfg: &SmoteConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot balance an empty dataset"));
    }
    let frames = ds.sequences[0].frames();
    if ds.sequences.iter().any(|s| s.frames() != frames) {
        return Err(Error::invalid(
            "smote requires a frame-padded dataset (uniform sequence length)",
        ));
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, seq) in ds.sequences.iter().enumerate() {
        let label = seq
            .label
            .ok_or_else(|| Error::invalid(format!("sequence {i} is unlabeled")))?;
        members.entry(label).or_default().push(i);
    }
    let target = members.values().map(Vec::len).max().unwrap_or(0);

    let mut rng = rng_from(mix(cfg.seed, 0x534d_4f54));
    let mut out = ds.sequences.clone();
    for (&class, idxs) in &members {
        let deficit = target - idxs.len();
        if deficit == 0 {
            continue;
        }
        if idxs.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has a single sample; smote needs at least 2"
            )));
        }
        let k = cfg.k_neighbors.min(idxs.len() - 1);
        for _ in 0..deficit {
            let i = idxs[rng.gen_range(0..idxs.len())];
            let base = &ds.sequences[i];
            // Exact brute-force k nearest same-class neighbours.
            let mut dists: Vec<(usize, f64)> = idxs
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (j, sq_dist(base.flattened(), ds.sequences[j].flattened())))
                .collect();
            dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let (j, _) = dists[rng.gen_range(0..k)];
            let neighbour = &ds.sequences[j];
            let w: f64 = rng.gen_range(0.0..=1.0);
            let coords = lerp(base.flattened(), neighbour.flattened(), w);
            out.push(SkeletalSequence::new(
                frames,
                coords,
                Some(class),
                base.valid_frames.max(neighbour.valid_frames),
            )?);
        }
    }
    LabeledDataset::new(out, ds.num_classes)
}

fn is_missing(x: f64, y: f64) -> bool {
    x == 0.0 && y == 0.0
}

/// Maps each part's bounding box (over valid frames, ignoring missing
/// keypoints) onto the unit square, independently per part. A
/// degenerate box axis collapses to 0.5; missing keypoints and padded
/// frames stay untouched.
pub fn normalize_parts(seq: &SkeletalSequence) -> SkeletalSequence {
    let mut out = seq.clone();
    for part in Part::ALL {
        let range = part.range();
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut seen = false;
        for t in 0..seq.valid_frames {
            for k in range.clone() {
                let (x, y) = seq.xy(t, k);
                if is_missing(x, y) {
                    continue;
                }
                seen = true;
                min = (min.0.min(x), min.1.min(y));
                max = (max.0.max(x), max.1.max(y));
            }
        }
        if !seen {
            continue;
        }
        let map_axis = |v: f64, lo: f64, hi: f64| {
            if hi - lo < 1e-9 {
                0.5
            } else {
                (v - lo) / (hi - lo)
            }
        };
        for t in 0..seq.valid_frames {
            for k in range.clone() {
                let (x, y) = seq.xy(t, k);
                if is_missing(x, y) {
                    continue;
                }
                out.set_xy(
                    t,
                    k,
                    map_axis(x, min.0, max.0),
                    map_axis(y, min.1, max.1),
                );
            }
        }
    }
    out
}

pub fn normalize_dataset(ds: &LabeledDataset) -> Result<LabeledDataset> {
    LabeledDataset::new(
        ds.sequences.iter().map(normalize_parts).collect(),
        ds.num_classes,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub apply_probability: f64,
    pub rotate_max_deg: f64,
    pub squeeze_max_frac: f64,
    pub perspective_max_frac: f64,
    pub arm_rotate_max_deg: f64,
    pub gaussian_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            apply_probability: 0.5,
            rotate_max_deg: 15.0,
            squeeze_max_frac: 0.15,
            perspective_max_frac: 0.10,
            arm_rotate_max_deg: 10.0,
            gaussian_sigma: 0.001,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::invalid("apply_probability must lie in [0, 1]"));
        }
        for (name, v) in [
            ("rotate_max_deg", self.rotate_max_deg),
            ("squeeze_max_frac", self.squeeze_max_frac),
            ("perspective_max_frac", self.perspective_max_frac),
            ("arm_rotate_max_deg", self.arm_rotate_max_deg),
            ("gaussian_sigma", self.gaussian_sigma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Centroid of all non-missing coordinates over valid frames.
fn centroid(seq: &SkeletalSequence) -> (f64, f64) {
    let (mut cx, mut cy, mut n) = (0.0, 0.0, 0usize);
    for t in 0..seq.valid_frames {
        for k in 0..crate::data::KEYPOINTS {
            let (x, y) = seq.xy(t, k);
            if !is_missing(x, y) {
                cx += x;
                cy += y;
                n += 1;
            }
        }
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (cx / n as f64, cy / n as f64)
    }
}

fn transform_valid(seq: &SkeletalSequence, f: impl Fn(f64, f64) -> (f64, f64)) -> SkeletalSequence {
    let mut out = seq.clone();
    for t in 0..seq.valid_frames {
        for k in 0..crate::data::KEYPOINTS {
            let (x, y) = seq.xy(t, k);
            if is_missing(x, y) {
                continue;
            }
            let (nx, ny) = f(x, y);
            out.set_xy(t, k, nx, ny);
        }
    }
    out
}

/// Global rotation about the sequence centroid.
pub fn apply_rotation(seq: &SkeletalSequence, angle_deg: f64) -> SkeletalSequence {
    let (cx, cy) = centroid(seq);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    transform_valid(seq, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
    })
}

/// Horizontal scaling about the centroid x.
pub fn apply_squeeze(seq: &SkeletalSequence, scale_x: f64) -> SkeletalSequence {
    let (cx, _) = centroid(seq);
    transform_valid(seq, |x, y| (cx + scale_x * (x - cx), y))
}

/// Projective warp defined by displacing the four corners of the
/// sequence bounding box.
pub fn apply_perspective(seq: &SkeletalSequence, corner_offsets: [(f64, f64); 4]) -> Result<SkeletalSequence> {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in 0..seq.valid_frames {
        for k in 0..crate::data::KEYPOINTS {
            let (x, y) = seq.xy(t, k);
            if is_missing(x, y) {
                continue;
            }
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
    }
    if !min.0.is_finite() || max.0 - min.0 < 1e-9 || max.1 - min.1 < 1e-9 {
        return Ok(seq.clone()); // nothing to warp
    }
    let src = [
        (min.0, min.1),
        (max.0, min.1),
        (max.0, max.1),
        (min.0, max.1),
    ];
    let dst: Vec<(f64, f64)> = src
        .iter()
        .zip(corner_offsets)
        .map(|(&(x, y), (dx, dy))| (x + dx, y + dy))
        .collect();
    let h = homography(&src, &dst)?;
    Ok(transform_valid(seq, |x, y| {
        let w = h[6] * x + h[7] * y + 1.0;
        (
            (h[0] * x + h[1] * y + h[2]) / w,
            (h[3] * x + h[4] * y + h[5]) / w,
        )
    }))
}

/// Rotates one forearm (body wrist keypoint plus that side's whole
/// hand) about the elbow, per frame.
pub fn apply_arm_rotation(seq: &SkeletalSequence, side: Part, angle_deg: f64) -> Result<SkeletalSequence> {
    let (elbow_kp, wrist_kp, hand) = match side {
        Part::LeftHand => (body_joint::LEFT_ELBOW, body_joint::LEFT_WRIST, Part::LeftHand),
        Part::RightHand => (body_joint::RIGHT_ELBOW, body_joint::RIGHT_WRIST, Part::RightHand),
        Part::Body => return Err(Error::invalid("arm rotation needs a hand side")),
    };
    let body_base = Part::Body.range().start;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = seq.clone();
    for t in 0..seq.valid_frames {
        let (ex, ey) = seq.xy(t, body_base + elbow_kp);
        if is_missing(ex, ey) {
            continue;
        }
        let rotate = |kp: usize, out: &mut SkeletalSequence| {
            let (x, y) = seq.xy(t, kp);
            if is_missing(x, y) {
                return;
            }
            let (dx, dy) = (x - ex, y - ey);
            out.set_xy(t, kp, ex + cos * dx - sin * dy, ey + sin * dx + cos * dy);
        };
        rotate(body_base + wrist_kp, &mut out);
        for kp in hand.range() {
            rotate(kp, &mut out);
        }
    }
    Ok(out)
}

/// With probability `apply_probability` one of the four geometric
/// transforms is applied (chosen uniformly); Gaussian noise is applied
/// independently whenever `gaussian_sigma > 0`. Deterministic per
/// `(seed, sample_index)`.
pub fn augment(seq: &SkeletalSequence, cfg: &AugmentConfig, sample_index: u64) -> Result<SkeletalSequence> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(seq.clone());
    }
    let mut rng = rng_from(mix(cfg.seed, mix(0x4155_47, sample_index)));
    let mut out = if rng.gen::<f64>() < cfg.apply_probability {
        match rng.gen_range(0..4u8) {
            0 => apply_rotation(seq, rng.gen_range(-cfg.rotate_max_deg..=cfg.rotate_max_deg)),
            1 => apply_squeeze(seq, rng.gen_range(1.0 - cfg.squeeze_max_frac..=1.0)),
            2 => {
                let box_frac = cfg.perspective_max_frac;
                let mut offsets = [(0.0, 0.0); 4];
                for o in &mut offsets {
                    *o = (
                        rng.gen_range(-box_frac..=box_frac),
                        rng.gen_range(-box_frac..=box_frac),
                    );
                }
                // Offsets are fractions of the box size; scale inside.
                let scaled = scale_offsets(seq, offsets);
                apply_perspective(seq, scaled)?
            }
            _ => {
                let side = if rng.gen::<bool>() { Part::LeftHand } else { Part::RightHand };
                apply_arm_rotation(seq, side, rng.gen_range(-cfg.arm_rotate_max_deg..=cfg.arm_rotate_max_deg))?
            }
        }
    } else {
        seq.clone()
    };
    if cfg.gaussian_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.gaussian_sigma)
            .map_err(|_| Error::invalid("gaussian_sigma must be finite"))?;
        for t in 0..out.valid_frames {
            for k in 0..crate::data::KEYPOINTS {
                let (x, y) = out.xy(t, k);
                if is_missing(x, y) {
                    continue;
                }
                out.set_xy(t, k, x + noise.sample(&mut rng), y + noise.sample(&mut rng));
            }
        }
    }
    Ok(out)
}

fn scale_offsets(seq: &SkeletalSequence, offsets: [(f64, f64); 4]) -> [(f64, f64); 4] {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in 0..seq.valid_frames {
        for k in 0..crate::data::KEYPOINTS {
            let (x, y) = seq.xy(t, k);
            if !is_missing(x, y) {
                min = (min.0.min(x), min.1.min(y));
                max = (max.0.max(x), max.1.max(y));
            }
        }
    }
    let (w, h) = ((max.0 - min.0).max(0.0), (max.1 - min.1).max(0.0));
    offsets.map(|(dx, dy)| (dx * w, dy * h))
}

/// Homography coefficients [a..h] mapping 4 source points onto 4
/// destination points: (x', y') = ((ax+by+c)/(gx+hy+1), (dx+ey+f)/(gx+hy+1)).
fn homography(src: &[(f64, f64); 4], dst: &[(f64, f64)]) -> Result<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting on the 8x9 system.
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::invalid("degenerate perspective corner placement"));
        }
        a.swap(col, pivot);
        let scale = a[col][col];
        for v in &mut a[col] {
            *v /= scale;
        }
        for row in 0..8 {
            if row != col {
                let factor = a[row][col];
                for c in 0..9 {
                    a[row][c] -= factor * a[col][c];
                }
            }
        }
    }
    let mut h = [0.0; 8];
    for (i, slot) in h.iter_mut().enumerate() {
        *slot = a[i][8];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, SynthSpec};
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_sequence(frames: usize, seed: u64) -> SkeletalSequence {
        let mut rng = rng_from(seed);
        let mut seq = SkeletalSequence::zeros(frames, frames, Some(0));
        for t in 0..frames {
            for k in 0..crate::data::KEYPOINTS {
                seq.set_xy(t, k, rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
            }
        }
        seq
    }

    #[test]
    fn lerp_endpoints() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![4.0, -1.0, 0.5];
        assert_eq!(lerp(&a, &b, 0.0), a);
        assert_eq!(lerp(&a, &b, 1.0), b);
    }

    fn point_segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let len_sq = sq_dist(a, b);
        let t = if len_sq == 0.0 {
            0.0
        } else {
            let dot: f64 = p
                .iter()
                .zip(a.iter().zip(b))
                .map(|(pi, (ai, bi))| (pi - ai) * (bi - ai))
                .sum();
            (dot / len_sq).clamp(0.0, 1.0)
        };
        let proj = lerp(a, b, t);
        sq_dist(p, &proj).sqrt()
    }

    #[test]
    fn smote_balances_counts_and_stays_on_segments() {
        let mut sequences: Vec<SkeletalSequence> = (0..3)
            .map(|i| {
                let mut s = random_sequence(4, 100 + i);
                s.label = Some(0);
                s
            })
            .collect();
        for i in 0..5 {
            let mut s = random_sequence(4, 200 + i);
            s.label = Some(1);
            sequences.push(s);
        }
        let ds = LabeledDataset::new(sequences, 2).unwrap();
        let out = smote_balance(&ds, &SmoteConfig { k_neighbors: 5, seed: 3 }).unwrap();
        let counts = out.class_counts();
        assert_eq!(counts[&0], 5);
        assert_eq!(counts[&1], 5);
        // Originals bit-preserved, in order.
        for (orig, kept) in ds.sequences.iter().zip(&out.sequences) {
            assert_eq!(orig, kept);
        }
        // Each synthetic lies on a segment between two originals of its class.
        let originals: Vec<&SkeletalSequence> =
            ds.sequences.iter().filter(|s| s.label == Some(0)).collect();
        for synth in &out.sequences[ds.len()..] {
            assert_eq!(synth.label, Some(0));
            let mut best = f64::INFINITY;
            for i in 0..originals.len() {
                for j in 0..originals.len() {
                    if i != j {
                        best = best.min(point_segment_distance(
                            synth.flattened(),
                            originals[i].flattened(),
                            originals[j].flattened(),
                        ));
                    }
                }
            }
            assert!(best < 1e-9, "synthetic off-segment by {best}");
        }
    }

    #[test]
    fn smote_is_deterministic() {
        let ds = generate_synthetic_dataset(&SynthSpec::new(3, 4, 5, 0.01, 5)).unwrap();
        let mut uneven = ds.sequences;
        uneven.truncate(10); // classes 0,1 full (4), class 2 has 2
        let ds = LabeledDataset::new(uneven, 3).unwrap();
        let cfg = SmoteConfig { k_neighbors: 3, seed: 11 };
        let a = smote_balance(&ds, &cfg).unwrap();
        let b = smote_balance(&ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn smote_rejects_unpadded_input() {
        let ds = LabeledDataset::new(
            vec![random_sequence(3, 1), random_sequence(4, 2)],
            1,
        )
        .unwrap();
        assert!(smote_balance(&ds, &SmoteConfig::default()).is_err());
    }

    #[test]
    fn smote_rejects_single_sample_minority() {
        let mut a = random_sequence(3, 1);
        a.label = Some(0);
        let mut b = random_sequence(3, 2);
        b.label = Some(1);
        let mut c = random_sequence(3, 3);
        c.label = Some(1);
        let ds = LabeledDataset::new(vec![a, b, c], 2).unwrap();
        assert!(smote_balance(&ds, &SmoteConfig::default()).is_err());
    }

    #[test]
    fn normalize_forces_unit_box() {
        let mut seq = SkeletalSequence::zeros(1, 1, None);
        let mut rng = rng_from(8);
        for k in 0..crate::data::KEYPOINTS {
            seq.set_xy(0, k, rng.gen_range(0.2..0.6), rng.gen_range(0.1..0.5));
        }
        // Pin the box corners inside the left hand.
        seq.set_xy(0, 0, 0.2, 0.1);
        seq.set_xy(0, 1, 0.6, 0.5);
        let out = normalize_parts(&seq);
        let (mut min, mut max) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for k in Part::LeftHand.range() {
            let (x, y) = out.xy(0, k);
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
        assert!(min.0.abs() < 1e-12 && min.1.abs() < 1e-12);
        assert!((max.0 - 1.0).abs() < 1e-12 && (max.1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let seq = random_sequence(3, 9);
        let once = normalize_parts(&seq);
        let twice = normalize_parts(&once);
        for (a, b) in once.coords().iter().zip(twice.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_degenerate_part_maps_to_half() {
        let mut seq = SkeletalSequence::zeros(2, 2, None);
        // Whole body collapses onto one point.
        for t in 0..2 {
            for k in Part::Body.range() {
                seq.set_xy(t, k, 0.3, 0.7);
            }
            // hands get ordinary spread so they normalize normally
            for (i, k) in Part::LeftHand.range().enumerate() {
                seq.set_xy(t, k, 0.1 + 0.01 * i as f64, 0.2 + 0.01 * i as f64);
            }
            for (i, k) in Part::RightHand.range().enumerate() {
                seq.set_xy(t, k, 0.5 + 0.01 * i as f64, 0.6 + 0.01 * i as f64);
            }
        }
        let out = normalize_parts(&seq);
        for t in 0..2 {
            for k in Part::Body.range() {
                assert_eq!(out.xy(t, k), (0.5, 0.5));
            }
        }
    }

    #[test]
    fn normalize_preserves_missing_and_padding() {
        let mut seq = random_sequence(3, 10);
        seq.valid_frames = 2;
        for v in seq.frame_mut(2) {
            *v = 0.0;
        }
        seq.set_xy(0, 5, 0.0, 0.0); // missing keypoint
        let out = normalize_parts(&seq);
        assert_eq!(out.xy(0, 5), (0.0, 0.0));
        assert!(out.frame(2).iter().all(|&v| v == 0.0));
        assert_eq!(out.valid_frames, 2);
    }

    #[test]
    fn augment_disabled_is_identity() {
        let seq = random_sequence(3, 11);
        let cfg = AugmentConfig { enabled: false, ..AugmentConfig::default() };
        assert_eq!(augment(&seq, &cfg, 0).unwrap(), seq);
    }

    #[test]
    fn augment_zero_magnitudes_is_identity() {
        let seq = random_sequence(3, 12);
        let cfg = AugmentConfig {
            enabled: true,
            apply_probability: 1.0,
            rotate_max_deg: 0.0,
            squeeze_max_frac: 0.0,
            perspective_max_frac: 0.0,
            arm_rotate_max_deg: 0.0,
            gaussian_sigma: 0.0,
            seed: 5,
        };
        for idx in 0..8 {
            let out = augment(&seq, &cfg, idx).unwrap();
            for (a, b) in out.coords().iter().zip(seq.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_inverts_exactly() {
        let seq = random_sequence(4, 13);
        let rotated = apply_rotation(&seq, 23.0);
        let back = apply_rotation(&rotated, -23.0);
        for (a, b) in back.coords().iter().zip(seq.coords()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn arm_rotation_moves_only_one_arm() {
        let seq = random_sequence(2, 14);
        let out = apply_arm_rotation(&seq, Part::LeftHand, 9.0).unwrap();
        for t in 0..2 {
            for k in Part::RightHand.range() {
                assert_eq!(out.xy(t, k), seq.xy(t, k));
            }
            let body = Part::Body.range().start;
            for b in 0..crate::data::BODY_KEYPOINTS {
                if b != body_joint::LEFT_WRIST {
                    assert_eq!(out.xy(t, body + b), seq.xy(t, body + b));
                }
            }
        }
    }

    #[test]
    fn perspective_identity_for_zero_offsets() {
        let seq = random_sequence(2, 15);
        let out = apply_perspective(&seq, [(0.0, 0.0); 4]).unwrap();
        for (a, b) in out.coords().iter().zip(seq.coords()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_noise_is_unbiased() {
        let seq = random_sequence(1, 16);
        let sigma = 0.01;
        let cfg = AugmentConfig {
            enabled: true,
            apply_probability: 0.0,
            gaussian_sigma: sigma,
            ..AugmentConfig::default()
        };
        let n = 10_000;
        let dim = seq.coords().len();
        let mut acc = vec![0.0f64; dim];
        for draw in 0..n {
            let out = augment(&seq, &cfg, draw as u64).unwrap();
            for (a, (o, s)) in acc.iter_mut().zip(out.coords().iter().zip(seq.coords())) {
                *a += o - s;
            }
        }
        for a in &acc {
            let bias = (a / n as f64).abs();
            assert!(bias < 3.0 * sigma / 100.0, "per-coordinate bias {bias}");
        }
    }
}
