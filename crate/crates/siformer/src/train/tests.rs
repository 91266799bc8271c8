use super::*;
use crate::attention::{AttnMode, PositionalMode};
use crate::data::{generate_synthetic_dataset, SynthSpec};
use crate::tensor::Matrix;

fn tiny_model() -> SiformerConfig {
    SiformerConfig {
        d_model: 12,
        encoder_layers: 1,
        decoder_layers: 1,
        left_heads: 3,
        right_heads: 3,
        body_heads: 2,
        decoder_heads: 6,
        ffn_dim: 24,
        attention_mode: AttnMode::Full,
        sampling_factor: 5.0,
        attention_seed: 1,
        use_padding_mask: true,
        positional: PositionalMode::FrameWise,
        distilling: false,
        feature_isolation: true,
        max_frames: 8,
        num_classes: 3,
    }
}

#[test]
fn cross_entropy_vanishes_with_huge_margin() {
    let logits = Tensor::constant(Matrix::from_vec(1, 3, vec![60.0, 0.0, 0.0]));
    let loss = cross_entropy(&logits, 0).unwrap().item();
    assert!(loss < 1e-12, "{loss}");
}

#[test]
fn cross_entropy_uniform_is_ln_classes() {
    let logits = Tensor::constant(Matrix::from_vec(1, 4, vec![0.7; 4]));
    let loss = cross_entropy(&logits, 2).unwrap().item();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let logits = Tensor::constant(Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
    let loss = cross_entropy(&logits, 0).unwrap().item();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let want = -(1f64.exp() / z).ln();
    assert!((loss - want).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let logits = Tensor::constant(Matrix::from_vec(1, 3, vec![0.0; 3]));
    assert!(cross_entropy(&logits, 3).is_err());
}

#[test]
fn adamw_zero_grad_zero_decay_is_identity() {
    let (theta, m, v) = adamw_update(1.5, 0.0, 0.0, 0.0, 1, 0.1, 0.9, 0.999, 0.0);
    assert_eq!(theta, 1.5);
    assert_eq!(m, 0.0);
    assert_eq!(v, 0.0);
}

#[test]
fn adamw_single_step_closed_form() {
    // theta=1, g=1: m_hat = v_hat = 1, so theta' = 1 - lr/(1 + eps).
    let (theta, _, _) = adamw_update(1.0, 1.0, 0.0, 0.0, 1, 0.1, 0.9, 0.999, 0.0);
    assert!((theta - 0.9).abs() < 1e-6, "{theta}");
}

#[test]
fn adamw_two_steps_match_hand_trace() {
    // Hand trace with g=1 both steps, lr=0.1, no decay:
    //   t=1: m=0.1, v=0.001, m_hat=v_hat=1       -> theta -= 0.1/(1+1e-8)
    //   t=2: m=0.19, v=0.001999, m_hat=v_hat=1   -> theta -= 0.1/(1+1e-8)
    let (t1, m1, v1) = adamw_update(1.0, 1.0, 0.0, 0.0, 1, 0.1, 0.9, 0.999, 0.0);
    let (t2, m2, v2) = adamw_update(t1, 1.0, m1, v1, 2, 0.1, 0.9, 0.999, 0.0);
    assert!((m2 - 0.19).abs() < 1e-15);
    assert!((v2 - 0.001999).abs() < 1e-15);
    let step = 0.1 / (1.0 + 1e-8);
    assert!((t1 - (1.0 - step)).abs() < 1e-12);
    assert!((t2 - (1.0 - 2.0 * step)).abs() < 1e-9, "{t2}");
}

#[test]
fn adamw_applies_decoupled_weight_decay() {
    let (theta, _, _) = adamw_update(2.0, 0.0, 0.0, 0.0, 1, 0.1, 0.9, 0.999, 0.5);
    // Decay shrinks theta by lr*wd*theta = 0.1*0.5*2 = 0.1; the Adam
    // term is zero for a zero gradient.
    assert!((theta - 1.9).abs() < 1e-12);
}

#[test]
fn lr_schedule_default_milestones() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_schedule(0, &cfg), 1e-4);
    assert_eq!(lr_schedule(59, &cfg), 1e-4);
    assert!((lr_schedule(60, &cfg) - 1e-5).abs() < 1e-18);
    assert!((lr_schedule(79, &cfg) - 1e-5).abs() < 1e-18);
    assert!((lr_schedule(80, &cfg) - 1e-6).abs() < 1e-19);
    assert!((lr_schedule(99, &cfg) - 1e-6).abs() < 1e-19);
}

#[test]
fn config_rejects_bad_milestones() {
    let mut cfg = TrainConfig::default();
    cfg.milestones = vec![80, 60];
    assert!(cfg.validate().is_err());
    cfg.milestones = vec![60, 200];
    assert!(cfg.validate().is_err());
}

fn quick_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr0: 1e-3,
        milestones: vec![],
        seed: 5,
        rectify: false,
        augment: false,
        smote: false,
        ..TrainConfig::default()
    }
}

#[test]
fn single_sample_overfits() {
    let ds = generate_synthetic_dataset(&SynthSpec::new(2, 1, 4, 0.0, 9)).unwrap();
    let ds = crate::data::LabeledDataset::new(vec![ds.sequences[0].clone()], 2).unwrap();
    let out = train(&ds, &tiny_model(), &quick_train_config(10), &PreprocessConfig::default()).unwrap();
    let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss did not strictly decrease: {losses:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let ds = generate_synthetic_dataset(&SynthSpec::new(2, 3, 4, 0.005, 10)).unwrap();
    let cfg = TrainConfig {
        augment: true,
        smote: true,
        rectify: true,
        ..quick_train_config(3)
    };
    let a = train(&ds, &tiny_model(), &cfg, &PreprocessConfig::default()).unwrap();
    let b = train(&ds, &tiny_model(), &cfg, &PreprocessConfig::default()).unwrap();
    assert_eq!(a.history, b.history);
    for ((na, ta), (nb, tb)) in a.params.named_params().iter().zip(b.params.named_params().iter()) {
        assert_eq!(na, nb);
        let (va, vb) = (ta.value(), tb.value());
        assert_eq!(
            va.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            vb.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "parameter {na} differs between runs"
        );
    }
}

#[test]
fn lr_history_follows_schedule() {
    let ds = generate_synthetic_dataset(&SynthSpec::new(2, 2, 4, 0.0, 11)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        milestones: vec![2, 4],
        gamma: 0.1,
        lr0: 1e-3,
        seed: 1,
        rectify: false,
        augment: false,
        smote: false,
        ..TrainConfig::default()
    };
    let out = train(&ds, &tiny_model(), &cfg, &PreprocessConfig::default()).unwrap();
    for record in &out.history.epochs {
        assert_eq!(record.lr, lr_schedule(record.epoch, &cfg));
    }
}

#[test]
fn internal_classifier_training_runs_and_persists() {
    let ds = generate_synthetic_dataset(&SynthSpec::new(2, 2, 4, 0.0, 12)).unwrap();
    let cfg = TrainConfig {
        train_internal_classifiers: true,
        ..quick_train_config(2)
    };
    let out = train(&ds, &tiny_model(), &cfg, &PreprocessConfig::default()).unwrap();
    let internal = out.params.internal.as_ref().expect("internal heads attached");
    assert_eq!(internal.encoder.len(), 1);
    assert_eq!(internal.decoder.len(), 1);
}
