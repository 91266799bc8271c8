//! Synthetic gloss generator for desk-scale experiments.
//!
//! Each class is a distinct parametric motion: both hands follow
//! class-specific sinusoidal trajectories while holding class-specific
//! static finger bends; the upper body sways along. Classes stay
//! linearly separable for noise levels up to about 0.01.

use super::{body_joint, hand_joint, Part, SkeletalSequence};
use super::{LabeledDataset, BODY_KEYPOINTS, HAND_KEYPOINTS};
use crate::rng::{mix, rng_from};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Planar hand pose expressed through the same bend angles (degrees)
/// the rectification stage measures.
///
/// At a non-thumb MCP the planar bend is simultaneously the
/// abduction-adduction angle (against the wrist-to-MCP ray) and the
/// flexion-extension angle (against the incoming bone, which is that
/// same ray), so a single value per finger suffices.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    /// Thumb CMC abduction against the wrist-to-index-MCP ray.
    pub thumb_cmc_aa: f64,
    pub thumb_mcp_fe: f64,
    pub thumb_ip_fe: f64,
    /// Index, middle, ring, little MCP bends.
    pub finger_mcp: [f64; 4],
    pub finger_pip: [f64; 4],
    pub finger_dip: [f64; 4],
}

impl HandPose {
    /// A relaxed pose sitting well inside every constraint range.
    pub fn neutral() -> Self {
        HandPose {
            thumb_cmc_aa: 20.0,
            thumb_mcp_fe: 3.0,
            thumb_ip_fe: 15.0,
            finger_mcp: [8.0, 6.0, 5.0, 7.0],
            finger_pip: [20.0, 22.0, 20.0, 18.0],
            finger_dip: [8.0, 9.0, 8.0, 7.0],
        }
    }
}

/// Ray angles (degrees, counterclockwise) of the metacarpal fan
/// relative to the hand orientation, and relative bone lengths.
const FINGER_SPREAD: [f64; 4] = [20.0, 7.0, -6.0, -19.0];
const FINGER_LENGTH_FACTOR: [f64; 4] = [1.0, 1.07, 1.0, 0.82];
// Short root bone: keeps the wrist-to-MCP ray close to the thumb
// metacarpal so the planar AA and FE corrections cannot fight.
const THUMB_ROOT_SPREAD: f64 = 30.0;
const THUMB_ROOT_LEN: f64 = 0.10;
const THUMB_METACARPAL_LEN: f64 = 0.45;
const THUMB_PROXIMAL_LEN: f64 = 0.30;
const THUMB_DISTAL_LEN: f64 = 0.22;
const FINGER_METACARPAL_LEN: f64 = 0.42;
const FINGER_PHALANX_LEN: [f64; 3] = [0.24, 0.16, 0.12];

fn polar(deg: f64, len: f64) -> (f64, f64) {
    let rad = deg.to_radians();
    (len * rad.cos(), len * rad.sin())
}

/// Builds the 21 keypoints of one hand. Bend angles accumulate along
/// each chain, counterclockwise-positive; `mirror` reflects the local
/// offsets horizontally, producing a right hand whose measured angles
/// (with the mirrored sign convention) match the left hand's.
pub fn build_hand(
    wrist: (f64, f64),
    scale: f64,
    orientation_deg: f64,
    mirror: bool,
    pose: &HandPose,
) -> Vec<(f64, f64)> {
    let mut local = vec![(0.0, 0.0); HAND_KEYPOINTS];

    // Thumb: the metacarpal direction is fixed by the CMC abduction
    // against the index ray; distal bends accumulate from there.
    let cmc = polar(orientation_deg + THUMB_ROOT_SPREAD, THUMB_ROOT_LEN * scale);
    local[hand_joint::THUMB_CMC] = cmc;
    let meta_dir = orientation_deg + FINGER_SPREAD[0] + pose.thumb_cmc_aa;
    let mcp = add(cmc, polar(meta_dir, THUMB_METACARPAL_LEN * scale));
    local[hand_joint::THUMB_MCP] = mcp;
    let prox_dir = meta_dir + pose.thumb_mcp_fe;
    let ip = add(mcp, polar(prox_dir, THUMB_PROXIMAL_LEN * scale));
    local[hand_joint::THUMB_IP] = ip;
    local[hand_joint::THUMB_TIP] = add(ip, polar(prox_dir + pose.thumb_ip_fe, THUMB_DISTAL_LEN * scale));

    for f in 0..4 {
        let base = hand_joint::INDEX_MCP + 4 * f;
        let lf = FINGER_LENGTH_FACTOR[f];
        let ray = orientation_deg + FINGER_SPREAD[f];
        let mcp = polar(ray, FINGER_METACARPAL_LEN * scale * lf);
        local[base] = mcp;
        let mut dir = ray + pose.finger_mcp[f];
        let pip = add(mcp, polar(dir, FINGER_PHALANX_LEN[0] * scale * lf));
        local[base + 1] = pip;
        dir += pose.finger_pip[f];
        let dip = add(pip, polar(dir, FINGER_PHALANX_LEN[1] * scale * lf));
        local[base + 2] = dip;
        dir += pose.finger_dip[f];
        local[base + 3] = add(dip, polar(dir, FINGER_PHALANX_LEN[2] * scale * lf));
    }

    local
        .into_iter()
        .map(|(dx, dy)| {
            let dx = if mirror { -dx } else { dx };
            (wrist.0 + dx, wrist.1 + dy)
        })
        .collect()
}

fn add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 + b.0, a.1 + b.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Fraction of samples whose hands get finger bends pushed beyond
    /// the constraint table (label-independent distortion).
    pub violation_rate: f64,
}

impl SynthSpec {
    pub fn new(classes: usize, samples_per_class: usize, frames: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            classes,
            samples_per_class,
            frames,
            noise_sigma,
            seed,
            violation_rate: 0.0,
        }
    }
}

const BODY_BASE: [(f64, f64); BODY_KEYPOINTS] = [
    (0.50, 0.15), // nose
    (0.50, 0.26), // neck
    (0.47, 0.13), // left eye
    (0.53, 0.13), // right eye
    (0.44, 0.15), // left ear
    (0.56, 0.15), // right ear
    (0.38, 0.28), // left shoulder
    (0.62, 0.28), // right shoulder
    (0.33, 0.43), // left elbow
    (0.67, 0.43), // right elbow
    (0.36, 0.58), // left wrist
    (0.64, 0.58), // right wrist
];

const HAND_SCALE: f64 = 0.16;

/// Deterministic per-(class, joint) value in [0, 1) for pose offsets.
fn class_unit(class: usize, side: usize, salt: u64) -> f64 {
    (mix((class * 2 + side) as u64 + 1, salt) % 1024) as f64 / 1024.0
}

fn class_pose(class: usize, side: usize) -> HandPose {
    let u = |salt: u64| class_unit(class, side, salt);
    HandPose {
        thumb_cmc_aa: 8.0 + 30.0 * u(1),
        thumb_mcp_fe: 1.0 + 4.0 * u(2),
        thumb_ip_fe: 5.0 + 60.0 * u(3),
        finger_mcp: [0, 1, 2, 3].map(|f| -11.0 + 22.0 * u(10 + f)),
        finger_pip: [0, 1, 2, 3].map(|f| 10.0 + 100.0 * u(20 + f)),
        finger_dip: [0, 1, 2, 3].map(|f| 5.0 + 70.0 * u(30 + f)),
    }
}

/// Generates the dataset described by `spec`. Bit-identical for equal
/// specs; every frame is valid (no padding).
pub fn generate_synthetic_dataset(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 {
        return Err(Error::invalid("synthetic dataset needs at least 2 classes"));
    }
    if spec.frames < 4 {
        return Err(Error::invalid("synthetic dataset needs at least 4 frames"));
    }
    if spec.samples_per_class == 0 {
        return Err(Error::invalid("samples_per_class must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.violation_rate) {
        return Err(Error::invalid("violation_rate must lie in [0, 1]"));
    }

    let two_pi = std::f64::consts::TAU;
    let mut sequences = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        let freq_a = 1.0 + 0.37 * class as f64;
        let freq_b = 0.63 + 0.29 * class as f64;
        let phase_a = two_pi * class as f64 / spec.classes as f64;
        let phase_b = 1.1 + 0.7 * phase_a;
        let amp = 0.055;
        let poses = [class_pose(class, 0), class_pose(class, 1)];

        for sample in 0..spec.samples_per_class {
            let salt = (class * 1_000_003 + sample) as u64;
            let mut rng = rng_from(mix(spec.seed, salt));

            // Small per-sample pose jitter, inside the legality margins.
            let jitter = |pose: &HandPose, rng: &mut rand_chacha::ChaCha8Rng| HandPose {
                thumb_cmc_aa: pose.thumb_cmc_aa + rng.gen_range(-2.0..2.0),
                thumb_mcp_fe: pose.thumb_mcp_fe + rng.gen_range(-0.8..0.8),
                thumb_ip_fe: pose.thumb_ip_fe + rng.gen_range(-2.0..2.0),
                finger_mcp: pose.finger_mcp.map(|v| v + rng.gen_range(-2.0..2.0)),
                finger_pip: pose.finger_pip.map(|v| v + rng.gen_range(-2.0..2.0)),
                finger_dip: pose.finger_dip.map(|v| v + rng.gen_range(-2.0..2.0)),
            };
            let mut hand_poses = [jitter(&poses[0], &mut rng), jitter(&poses[1], &mut rng)];

            if spec.violation_rate > 0.0 && rng.gen::<f64>() < spec.violation_rate {
                let side = rng.gen_range(0..2usize);
                let f1 = rng.gen_range(0..4usize);
                let f2 = (f1 + 1 + rng.gen_range(0..3usize)) % 4;
                hand_poses[side].finger_pip[f1] = 140.0 + 30.0 * rng.gen::<f64>();
                hand_poses[side].finger_pip[f2] = 140.0 + 30.0 * rng.gen::<f64>();
                hand_poses[side].finger_dip[f1] = 100.0 + 40.0 * rng.gen::<f64>();
            }

            let noise = Normal::new(0.0, spec.noise_sigma).map_err(|_| {
                Error::invalid("noise_sigma must be non-negative and finite")
            })?;

            let mut seq = SkeletalSequence::zeros(spec.frames, spec.frames, Some(class));
            for t in 0..spec.frames {
                let phase = t as f64 / spec.frames as f64;
                let wl = (
                    BODY_BASE[body_joint::LEFT_WRIST].0 + amp * (two_pi * freq_a * phase + phase_a).sin(),
                    BODY_BASE[body_joint::LEFT_WRIST].1 + amp * (two_pi * freq_b * phase + phase_b).cos(),
                );
                let wr = (
                    BODY_BASE[body_joint::RIGHT_WRIST].0 + amp * (two_pi * freq_b * phase + phase_b).sin(),
                    BODY_BASE[body_joint::RIGHT_WRIST].1 + amp * (two_pi * freq_a * phase + phase_a).cos(),
                );
                let sway = 0.008 * (two_pi * freq_a * phase + phase_b).sin();

                let left = build_hand(wl, HAND_SCALE, 100.0, false, &hand_poses[0]);
                let right = build_hand(wr, HAND_SCALE, 80.0, true, &hand_poses[1]);
                for (k, &(x, y)) in left.iter().enumerate() {
                    seq.set_xy(t, Part::LeftHand.range().start + k, x, y);
                }
                for (k, &(x, y)) in right.iter().enumerate() {
                    seq.set_xy(t, Part::RightHand.range().start + k, x, y);
                }
                let body_base_offset = Part::Body.range().start;
                for b in 0..BODY_KEYPOINTS {
                    let (mut x, mut y) = BODY_BASE[b];
                    x += sway;
                    match b {
                        body_joint::LEFT_WRIST => (x, y) = wl,
                        body_joint::RIGHT_WRIST => (x, y) = wr,
                        body_joint::LEFT_ELBOW => {
                            x += 0.5 * (wl.0 - BODY_BASE[body_joint::LEFT_WRIST].0);
                            y += 0.5 * (wl.1 - BODY_BASE[body_joint::LEFT_WRIST].1);
                        }
                        body_joint::RIGHT_ELBOW => {
                            x += 0.5 * (wr.0 - BODY_BASE[body_joint::RIGHT_WRIST].0);
                            y += 0.5 * (wr.1 - BODY_BASE[body_joint::RIGHT_WRIST].1);
                        }
                        _ => {}
                    }
                    seq.set_xy(t, body_base_offset + b, x, y);
                }

                if spec.noise_sigma > 0.0 {
                    for v in seq.frame_mut(t) {
                        *v += noise.sample(&mut rng);
                    }
                }
            }
            sequences.push(seq);
        }
    }
    LabeledDataset::new(sequences, spec.classes)
}
