//! Kinematic hand-pose rectification.
//!
//! Per frame and per hand, joints are processed root-to-tip; the joint
//! angle is measured, compared against the allowable range for that
//! joint and motion type, and the entire distal chain is rigidly
//! rotated about the joint by `alpha * error` in the direction that
//! reduces the violation. Rigid chain rotation keeps every bone length
//! intact and leaves already-processed proximal angles untouched.
//!
//! Angles are planar: the flexion-extension angle at a joint is the
//! signed angle between the incoming bone (parent to joint) and the
//! outgoing bone (joint to child); abduction-adduction at an MCP/CMC
//! joint is the signed angle between the palm ray and the outgoing
//! bone. The sign convention mirrors between hands so a left hand and
//! its reflection measure identical angles.

use crate::data::{hand_joint, Part, SkeletalSequence};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    AbductionAdduction,
    FlexionExtension,
}

impl Motion {
    pub fn short(self) -> &'static str {
        match self {
            Motion::AbductionAdduction => "aa",
            Motion::FlexionExtension => "fe",
        }
    }
}

impl std::str::FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aa" => Ok(Motion::AbductionAdduction),
            "fe" => Ok(Motion::FlexionExtension),
            other => Err(Error::invalid(format!("unknown motion '{other}' (expected aa or fe)"))),
        }
    }
}

/// Constraint-table row classes for the 21-keypoint hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    ThumbCmc,
    ThumbMcp,
    ThumbIp,
    FingerMcp,
    FingerPip,
    FingerDip,
}

impl JointKind {
    pub fn name(self) -> &'static str {
        match self {
            JointKind::ThumbCmc => "thumb_cmc",
            JointKind::ThumbMcp => "thumb_mcp",
            JointKind::ThumbIp => "thumb_ip",
            JointKind::FingerMcp => "finger_mcp",
            JointKind::FingerPip => "finger_pip",
            JointKind::FingerDip => "finger_dip",
        }
    }
}

/// Allowable motion ranges in degrees per (joint kind, motion).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTable {
    entries: BTreeMap<(JointKind, Motion), (f64, f64)>,
}

impl Default for ConstraintTable {
    fn default() -> Self {
        use JointKind::*;
        use Motion::*;
        let rows = [
            (ThumbCmc, AbductionAdduction, 0.0, 45.0),
            (ThumbMcp, AbductionAdduction, -7.0, 12.0),
            (FingerMcp, AbductionAdduction, -15.0, 15.0),
            (ThumbCmc, FlexionExtension, -20.0, 45.0),
            (ThumbMcp, FlexionExtension, 0.0, 80.0),
            (ThumbIp, FlexionExtension, -30.0, 90.0),
            (FingerMcp, FlexionExtension, -40.0, 90.0),
            (FingerPip, FlexionExtension, 0.0, 130.0),
            (FingerDip, FlexionExtension, -30.0, 90.0),
        ];
        let mut entries = BTreeMap::new();
        for (kind, motion, min, max) in rows {
            entries.insert((kind, motion), (min, max));
        }
        ConstraintTable { entries }
    }
}

impl ConstraintTable {
    pub fn range(&self, kind: JointKind, motion: Motion) -> Option<(f64, f64)> {
        self.entries.get(&(kind, motion)).copied()
    }

    pub fn set_range(&mut self, kind: JointKind, motion: Motion, min: f64, max: f64) -> Result<()> {
        if min > max {
            return Err(Error::invalid(format!(
                "constraint min {min} exceeds max {max} for {}/{}",
                kind.name(),
                motion.short()
            )));
        }
        self.entries.insert((kind, motion), (min, max));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(JointKind, Motion), &(f64, f64))> {
        self.entries.iter()
    }
}

/// Tree structure of one 21-keypoint hand plus the sign convention for
/// planar angles (mirrored between hands).
#[derive(Debug, Clone)]
pub struct HandTopology {
    part: Part,
    angle_sign: f64,
    parent: [Option<usize>; 21],
    child: [Option<usize>; 21],
}

/// The five chains in processing order: each runs root-to-tip.
pub const CHAINS: [[usize; 4]; 5] = [
    [hand_joint::THUMB_CMC, hand_joint::THUMB_MCP, hand_joint::THUMB_IP, hand_joint::THUMB_TIP],
    [hand_joint::INDEX_MCP, hand_joint::INDEX_PIP, hand_joint::INDEX_DIP, hand_joint::INDEX_TIP],
    [hand_joint::MIDDLE_MCP, hand_joint::MIDDLE_PIP, hand_joint::MIDDLE_DIP, hand_joint::MIDDLE_TIP],
    [hand_joint::RING_MCP, hand_joint::RING_PIP, hand_joint::RING_DIP, hand_joint::RING_TIP],
    [hand_joint::LITTLE_MCP, hand_joint::LITTLE_PIP, hand_joint::LITTLE_DIP, hand_joint::LITTLE_TIP],
];

impl HandTopology {
    pub fn left() -> Self {
        Self::build(Part::LeftHand, 1.0)
    }

    pub fn right() -> Self {
        Self::build(Part::RightHand, -1.0)
    }

    pub fn for_part(part: Part) -> Result<Self> {
        match part {
            Part::LeftHand => Ok(Self::left()),
            Part::RightHand => Ok(Self::right()),
            Part::Body => Err(Error::invalid("body has no hand topology")),
        }
    }

    fn build(part: Part, angle_sign: f64) -> Self {
        let mut parent = [None; 21];
        let mut child = [None; 21];
        for chain in CHAINS {
            parent[chain[0]] = Some(hand_joint::WRIST);
            for w in chain.windows(2) {
                parent[w[1]] = Some(w[0]);
                child[w[0]] = Some(w[1]);
            }
        }
        HandTopology { part, angle_sign, parent, child }
    }

    pub fn part(&self) -> Part {
        self.part
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn child(&self, joint: usize) -> Option<usize> {
        self.child[joint]
    }

    /// All joints strictly distal to `joint` (its chain below it).
    pub fn descendants(&self, joint: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cursor = self.child[joint];
        while let Some(j) = cursor {
            out.push(j);
            cursor = self.child[j];
        }
        out
    }

    pub fn joint_kind(joint: usize) -> Option<JointKind> {
        use hand_joint::*;
        match joint {
            THUMB_CMC => Some(JointKind::ThumbCmc),
            THUMB_MCP => Some(JointKind::ThumbMcp),
            THUMB_IP => Some(JointKind::ThumbIp),
            INDEX_MCP | MIDDLE_MCP | RING_MCP | LITTLE_MCP => Some(JointKind::FingerMcp),
            INDEX_PIP | MIDDLE_PIP | RING_PIP | LITTLE_PIP => Some(JointKind::FingerPip),
            INDEX_DIP | MIDDLE_DIP | RING_DIP | LITTLE_DIP => Some(JointKind::FingerDip),
            _ => None,
        }
    }

    /// Palm-ray endpoints (from, to) for abduction-adduction at
    /// `joint`, or None where the motion is undefined.
    fn aa_reference(&self, joint: usize) -> Option<(usize, usize)> {
        match Self::joint_kind(joint)? {
            JointKind::FingerMcp => Some((hand_joint::WRIST, joint)),
            JointKind::ThumbMcp => Some((hand_joint::WRIST, hand_joint::THUMB_MCP)),
            JointKind::ThumbCmc => Some((hand_joint::WRIST, hand_joint::INDEX_MCP)),
            _ => None,
        }
    }

    fn joint_name(&self, joint: usize) -> String {
        format!("{}[{joint}]", self.part.name())
    }

    fn xy(&self, frame: &[f64], joint: usize) -> (f64, f64) {
        let g = self.part.range().start + joint;
        (frame[2 * g], frame[2 * g + 1])
    }

    fn set_xy(&self, frame: &mut [f64], joint: usize, x: f64, y: f64) {
        let g = self.part.range().start + joint;
        frame[2 * g] = x;
        frame[2 * g + 1] = y;
    }

    fn bone(&self, frame: &[f64], from: usize, to: usize) -> Result<(f64, f64)> {
        let (ax, ay) = self.xy(frame, from);
        let (bx, by) = self.xy(frame, to);
        let v = (bx - ax, by - ay);
        if v.0.hypot(v.1) < 1e-12 {
            return Err(Error::DegenerateBone(self.joint_name(to)));
        }
        Ok(v)
    }

    /// True when every keypoint of this hand is exactly (0, 0).
    pub fn is_absent(&self, frame: &[f64]) -> bool {
        let r = self.part.range();
        frame[2 * r.start..2 * r.end].iter().all(|&v| v == 0.0)
    }
}

fn signed_angle_deg(u: (f64, f64), v: (f64, f64)) -> f64 {
    let cross = u.0 * v.1 - u.1 * v.0;
    let dot = u.0 * v.0 + u.1 * v.1;
    cross.atan2(dot).to_degrees()
}

/// Measures the signed joint angle in degrees.
///
/// Flexion-extension: angle at the joint between the incoming bone
/// (parent to joint) and the outgoing bone (joint to child); zero
/// when straight. Abduction-adduction (MCP/CMC only): angle between
/// the palm ray and the outgoing bone.
pub fn joint_angle(
    joint: usize,
    frame: &[f64],
    topo: &HandTopology,
    motion: Motion,
) -> Result<f64> {
    let child = topo.child(joint).ok_or_else(|| Error::MotionNotDefined {
        motion: motion.short().to_string(),
        joint: topo.joint_name(joint),
    })?;
    let reference = match motion {
        Motion::FlexionExtension => {
            let parent = topo.parent(joint).ok_or_else(|| Error::MotionNotDefined {
                motion: motion.short().to_string(),
                joint: topo.joint_name(joint),
            })?;
            topo.bone(frame, parent, joint)?
        }
        Motion::AbductionAdduction => {
            let (from, to) = topo.aa_reference(joint).ok_or_else(|| Error::MotionNotDefined {
                motion: motion.short().to_string(),
                joint: topo.joint_name(joint),
            })?;
            topo.bone(frame, from, to)?
        }
    };
    let outgoing = topo.bone(frame, joint, child)?;
    Ok(topo.angle_sign * signed_angle_deg(reference, outgoing))
}

/// Constraint-violation magnitude: how many degrees `theta` lies
/// outside the allowed range (zero when inside).
pub fn angle_error(
    theta: f64,
    kind: JointKind,
    motion: Motion,
    table: &ConstraintTable,
) -> Result<f64> {
    let (min, max) = table.range(kind, motion).ok_or_else(|| Error::MissingConstraint {
        joint: kind.name().to_string(),
        motion: motion.short().to_string(),
    })?;
    Ok(if theta > max {
        theta - max
    } else if theta < min {
        min - theta
    } else {
        0.0
    })
}

/// Rigidly rotates the distal chain of `joint` (its child and all
/// descendants) about the joint position by `alpha * eps` degrees in
/// the measured-angle `direction` (+1 increases the angle). Bone
/// lengths are preserved exactly up to rounding.
pub fn rectify_joint(
    joint: usize,
    frame: &mut [f64],
    eps: f64,
    alpha: f64,
    direction: f64,
    topo: &HandTopology,
) -> Result<()> {
    if eps < 0.0 {
        return Err(Error::invalid("rectify_joint: eps must be non-negative"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("rectify_joint: alpha must lie in [0, 1]"));
    }
    if direction != 1.0 && direction != -1.0 {
        return Err(Error::invalid("rectify_joint: direction must be +1 or -1"));
    }
    if eps == 0.0 || alpha == 0.0 {
        return Ok(());
    }
    // The measured angle is angle_sign * raw ccw angle, so a desired
    // measured-angle change maps back through the sign.
    let phi = (topo.angle_sign * direction * alpha * eps).to_radians();
    let (cx, cy) = topo.xy(frame, joint);
    let (sin, cos) = phi.sin_cos();
    for j in topo.descendants(joint) {
        let (x, y) = topo.xy(frame, j);
        let (dx, dy) = (x - cx, y - cy);
        topo.set_xy(frame, j, cx + cos * dx - sin * dy, cy + sin * dx + cos * dy);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionSet {
    pub aa: bool,
    pub fe: bool,
}

impl Default for MotionSet {
    fn default() -> Self {
        MotionSet { aa: true, fe: true }
    }
}

impl MotionSet {
    pub fn contains(&self, motion: Motion) -> bool {
        match motion {
            Motion::AbductionAdduction => self.aa,
            Motion::FlexionExtension => self.fe,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut set = MotionSet { aa: false, fe: false };
        for token in s.split(',').filter(|t| !t.trim().is_empty()) {
            match token.parse::<Motion>()? {
                Motion::AbductionAdduction => set.aa = true,
                Motion::FlexionExtension => set.fe = true,
            }
        }
        Ok(set)
    }
}

impl std::fmt::Display for MotionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.aa, self.fe) {
            (true, true) => write!(f, "aa,fe"),
            (true, false) => write!(f, "aa"),
            (false, true) => write!(f, "fe"),
            (false, false) => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RectifyConfig {
    /// Correction strength: 0 leaves poses untouched, 1 rectifies each
    /// violated angle all the way to its nearest bound.
    pub alpha: f64,
    pub motions: MotionSet,
}

impl Default for RectifyConfig {
    fn default() -> Self {
        RectifyConfig { alpha: 0.4, motions: MotionSet::default() }
    }
}

impl RectifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JointMotionStats {
    pub measured: usize,
    pub violations: usize,
    pub mean_eps_before: f64,
    pub mean_eps_after: f64,
}

/// Aggregated rectification outcome across frames (and sequences).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RectifyReport {
    pub frames_processed: usize,
    pub hands_skipped: usize,
    pub joints_skipped: usize,
    pub stats: BTreeMap<String, JointMotionStats>,
}

impl RectifyReport {
    fn record(&mut self, kind: JointKind, motion: Motion, before: f64, after: f64) {
        let entry = self
            .stats
            .entry(format!("{}/{}", kind.name(), motion.short()))
            .or_default();
        // Means are maintained incrementally.
        let n = entry.measured as f64;
        entry.mean_eps_before = (entry.mean_eps_before * n + before) / (n + 1.0);
        entry.mean_eps_after = (entry.mean_eps_after * n + after) / (n + 1.0);
        entry.measured += 1;
        if before > 0.0 {
            entry.violations += 1;
        }
    }

    pub fn merge(&mut self, other: &RectifyReport) {
        self.frames_processed += other.frames_processed;
        self.hands_skipped += other.hands_skipped;
        self.joints_skipped += other.joints_skipped;
        for (key, theirs) in &other.stats {
            let entry = self.stats.entry(key.clone()).or_default();
            let n = entry.measured as f64;
            let m = theirs.measured as f64;
            if n + m > 0.0 {
                entry.mean_eps_before =
                    (entry.mean_eps_before * n + theirs.mean_eps_before * m) / (n + m);
                entry.mean_eps_after =
                    (entry.mean_eps_after * n + theirs.mean_eps_after * m) / (n + m);
            }
            entry.measured += theirs.measured;
            entry.violations += theirs.violations;
        }
    }
}

/// Motion processing order within a joint: lateral deviation first,
/// then bending.
const MOTION_ORDER: [Motion; 2] = [Motion::AbductionAdduction, Motion::FlexionExtension];

/// Rectifies one frame's hand in place. Joints run root-to-tip per
/// finger so proximal corrections land before distal angles are
/// measured. Degenerate bones are skipped and counted.
pub fn rectify_hand_frame(
    frame: &mut [f64],
    topo: &HandTopology,
    cfg: &RectifyConfig,
    table: &ConstraintTable,
    report: &mut RectifyReport,
) -> Result<()> {
    for chain in CHAINS {
        for &joint in &chain {
            let Some(kind) = HandTopology::joint_kind(joint) else { continue };
            for motion in MOTION_ORDER {
                if !cfg.motions.contains(motion) {
                    continue;
                }
                if table.range(kind, motion).is_none() {
                    continue;
                }
                if motion == Motion::AbductionAdduction && topo.aa_reference(joint).is_none() {
                    continue;
                }
                let theta = match joint_angle(joint, frame, topo, motion) {
                    Ok(theta) => theta,
                    Err(Error::DegenerateBone(_)) => {
                        report.joints_skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let eps = angle_error(theta, kind, motion, table)?;
                if eps > 0.0 {
                    let (_, max) = table.range(kind, motion).expect("checked above");
                    let direction = if theta > max { -1.0 } else { 1.0 };
                    rectify_joint(joint, frame, eps, cfg.alpha, direction, topo)?;
                    let theta_after = joint_angle(joint, frame, topo, motion)?;
                    let eps_after = angle_error(theta_after, kind, motion, table)?;
                    report.record(kind, motion, eps, eps_after);
                } else {
                    report.record(kind, motion, 0.0, 0.0);
                }
            }
        }
    }
    Ok(())
}

/// Rectifies every valid frame of both hands. Body keypoints and
/// padded frames are untouched; absent (all-zero) hands are skipped.
pub fn rectify_sequence(
    seq: &SkeletalSequence,
    cfg: &RectifyConfig,
    table: &ConstraintTable,
) -> Result<(SkeletalSequence, RectifyReport)> {
    cfg.validate()?;
    let mut out = seq.clone();
    let mut report = RectifyReport::default();
    let topologies = [HandTopology::left(), HandTopology::right()];
    for t in 0..seq.valid_frames {
        let frame = out.frame_mut(t);
        for topo in &topologies {
            if topo.is_absent(frame) {
                report.hands_skipped += 1;
                continue;
            }
            rectify_hand_frame(frame, topo, cfg, table, &mut report)?;
        }
        report.frames_processed += 1;
    }
    Ok((out, report))
}

/// Applies [`rectify_sequence`] to every sequence, merging reports.
pub fn rectify_dataset(
    ds: &crate::data::LabeledDataset,
    cfg: &RectifyConfig,
    table: &ConstraintTable,
) -> Result<(crate::data::LabeledDataset, RectifyReport)> {
    let mut report = RectifyReport::default();
    let mut sequences = Vec::with_capacity(ds.len());
    for seq in &ds.sequences {
        let (fixed, r) = rectify_sequence(seq, cfg, table)?;
        report.merge(&r);
        sequences.push(fixed);
    }
    Ok((
        crate::data::LabeledDataset::new(sequences, ds.num_classes)?,
        report,
    ))
}

/// Re-measures every constrained (joint, motion) pair of both hands on
/// every valid frame, returning the largest violation found. Used as
/// the post-rectification legality audit.
pub fn max_violation(seq: &SkeletalSequence, table: &ConstraintTable) -> Result<f64> {
    let topologies = [HandTopology::left(), HandTopology::right()];
    let mut worst = 0.0f64;
    for t in 0..seq.valid_frames {
        let frame = seq.frame(t);
        for topo in &topologies {
            if topo.is_absent(frame) {
                continue;
            }
            for chain in CHAINS {
                for &joint in &chain {
                    let Some(kind) = HandTopology::joint_kind(joint) else { continue };
                    for motion in MOTION_ORDER {
                        if table.range(kind, motion).is_none() {
                            continue;
                        }
                        if motion == Motion::AbductionAdduction
                            && topo.aa_reference(joint).is_none()
                        {
                            continue;
                        }
                        match joint_angle(joint, frame, topo, motion) {
                            Ok(theta) => {
                                worst = worst.max(angle_error(theta, kind, motion, table)?);
                            }
                            Err(Error::DegenerateBone(_)) => continue,
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// All 20 parent-child bone lengths of one hand in a frame.
pub fn bone_lengths(frame: &[f64], topo: &HandTopology) -> Vec<f64> {
    let mut out = Vec::with_capacity(20);
    for chain in CHAINS {
        let mut prev = hand_joint::WRIST;
        for &joint in &chain {
            let (ax, ay) = topo.xy(frame, prev);
            let (bx, by) = topo.xy(frame, joint);
            out.push((bx - ax).hypot(by - ay));
            prev = joint;
        }
    }
    out
}
