//! Skeleton-based sign language recognition at desk scale.
//!
//! The pipeline covers the full path from raw keypoint sequences to an
//! input-adaptive classifier:
//!
//! * [`tensor`] — a small dense-matrix autograd engine (f64, reverse mode)
//!   with a finite-difference gradient checker.
//! * [`data`] — the 54-keypoint skeletal sequence representation, JSON I/O,
//!   frame padding, per-part partitioning and a synthetic gloss generator.
//! * [`rectify`] — kinematic hand-pose rectification against per-joint
//!   angle constraints.
//! * [`sampling`] — SMOTE class balancing, part-based normalization and
//!   geometric augmentations.
//! * [`attention`] — full and ProbSparse attention, multi-head wrappers,
//!   positional encodings and the optional distilling layer.
//! * [`model`] — the feature-isolated transformer (three part encoders,
//!   a class-query decoder) plus analytic FLOPs accounting.
//! * [`train`] — cross-entropy, AdamW, multi-step LR schedule and the
//!   epoch loop.
//! * [`infer`] — patience-based early exit, dataset evaluation and the
//!   missing-keypoint robustness sweep.

pub mod attention;
pub mod data;
pub mod infer;
pub mod model;
pub mod rectify;
pub mod sampling;
pub mod tensor;
pub mod train;

mod error;
pub mod rng;

pub use error::{Error, Result};
