//! Subcommand definitions and execution.

use crate::config::{parse_patience, RunConfig};
use crate::report::{percent, render_metrics_table, to_json};
use crate::{CliError, CliResult};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use siformer::data::{
    generate_synthetic_dataset, load_dataset, pad_to_max_frames, save_dataset, write_atomic,
    LabeledDataset, Part, SynthSpec,
};
use siformer::infer::{evaluate, infer_adaptive, robustness_sweep, ClassifierMode, EarlyExitConfig, ExitSite};
use siformer::model::{count_flops, load_checkpoint, save_checkpoint, ExitPoint, SiformerParams};
use siformer::rectify::{rectify_dataset, ConstraintTable, MotionSet};
use siformer::sampling::{augment, smote_balance};
use siformer::tensor::grad_check;
use siformer::train::{cross_entropy, train};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "siformer",
    about = "Skeleton-based sign language recognition pipeline",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic gloss dataset.
    Synth(SynthArgs),
    /// Apply kinematic hand-pose rectification to a dataset.
    Rectify(RectifyArgs),
    /// Balance class counts with SMOTE oversampling.
    Oversample(OversampleArgs),
    /// Apply the augmentation suite to every sequence.
    Augment(AugmentArgs),
    /// Train a model and write a checkpoint plus history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Per-instance adaptive inference with exit traces.
    Infer(InferArgs),
    /// Accuracy under increasing keypoint removal.
    Robustness(RobustnessArgs),
    /// Analytic FLOPs for a configuration.
    Flops(FlopsArgs),
    /// Train/evaluate across a grid of rectification strengths.
    Alphasweep(AlphaSweepArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long = "per-class", default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "violation-rate", default_value_t = 0.0)]
    pub violation_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RectifyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated motion list, e.g. "aa,fe".
    #[arg(long)]
    pub motions: Option<String>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct OversampleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub prob: Option<f64>,
    #[arg(long = "rotate-max")]
    pub rotate_max: Option<f64>,
    #[arg(long = "squeeze-max")]
    pub squeeze_max: Option<f64>,
    #[arg(long = "perspective-max")]
    pub perspective_max: Option<f64>,
    #[arg(long = "arm-rotate-max")]
    pub arm_rotate_max: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "d-model")]
    pub d_model: Option<usize>,
    #[arg(long = "encoder-layers")]
    pub encoder_layers: Option<usize>,
    #[arg(long = "decoder-layers")]
    pub decoder_layers: Option<usize>,
    #[arg(long = "ffn-dim")]
    pub ffn_dim: Option<usize>,
    /// full or probsparse
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long = "max-frames")]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub rectify: Option<bool>,
    #[arg(long)]
    pub smote: Option<bool>,
    #[arg(long)]
    pub augment: Option<bool>,
    #[arg(long = "feature-isolation")]
    pub feature_isolation: Option<bool>,
    #[arg(long = "train-internal-classifiers", default_value_t = false)]
    pub train_internal_classifiers: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args)]
pub struct ExitFlags {
    /// Positive integer or "off".
    #[arg(long)]
    pub patience: Option<String>,
    /// encoder or decoder
    #[arg(long)]
    pub site: Option<String>,
    /// fresh or trained
    #[arg(long)]
    pub classifiers: Option<String>,
    #[arg(long = "exit-seed")]
    pub exit_seed: Option<u64>,
}

impl ExitFlags {
    fn apply(&self, cfg: &mut siformer::infer::EarlyExitConfig) -> CliResult<()> {
        if let Some(p) = &self.patience {
            cfg.patience = parse_patience(p)?;
        }
        if let Some(site) = &self.site {
            cfg.site = match site.as_str() {
                "encoder" => ExitSite::Encoder,
                "decoder" => ExitSite::Decoder,
                other => {
                    return Err(CliError::validation(format!(
                        "--site must be encoder or decoder, got '{other}'"
                    )))
                }
            };
        }
        if let Some(mode) = &self.classifiers {
            cfg.classifier_mode = match mode.as_str() {
                "fresh" => ClassifierMode::Fresh,
                "trained" => ClassifierMode::Trained,
                other => {
                    return Err(CliError::validation(format!(
                        "--classifiers must be fresh or trained, got '{other}'"
                    )))
                }
            };
        }
        if let Some(seed) = self.exit_seed {
            cfg.seed = seed;
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub exit: ExitFlags,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub exit: ExitFlags,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated part list: left,right,body.
    #[arg(long, default_value = "left,right,body")]
    pub parts: String,
    /// Comma-separated sweep seeds.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[command(flatten)]
    pub exit: ExitFlags,
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: usize,
    /// encoder or decoder
    #[arg(long = "exit-site")]
    pub exit_site: Option<String>,
    #[arg(long = "exit-layer")]
    pub exit_layer: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct AlphaSweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    pub alphas: String,
    #[arg(long)]
    pub motions: Option<String>,
    /// Fraction of each class held out for evaluation.
    #[arg(long = "holdout-frac", default_value_t = 0.2)]
    pub holdout_frac: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub csv: PathBuf,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 12)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Seed for weights and the probe sample. The default picks a
    /// well-conditioned evaluation point: central differences carry
    /// ~1e-11 of f64 cancellation noise, which can drown the relative
    /// error of parameters whose true gradient is below ~1e-7.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Rectify(args) => run_rectify(args),
        Command::Oversample(args) => run_oversample(args),
        Command::Augment(args) => run_augment(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Infer(args) => run_infer(args),
        Command::Robustness(args) => run_robustness(args),
        Command::Flops(args) => run_flops(args),
        Command::Alphasweep(args) => run_alphasweep(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_atomic(path, to_json(value).as_bytes()).map_err(CliError::from)
}

fn run_synth(args: SynthArgs) -> CliResult<()> {
    let mut spec = SynthSpec::new(args.classes, args.per_class, args.frames, args.sigma, args.seed);
    spec.violation_rate = args.violation_rate;
    let ds = generate_synthetic_dataset(&spec)?;
    save_dataset(&ds, &args.out)?;
    println!("wrote {} sequences ({} classes) to {}", ds.len(), ds.num_classes, args.out.display());
    Ok(())
}

fn run_rectify(args: RectifyArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.rectify;
    if let Some(alpha) = args.alpha {
        cfg.alpha = alpha;
    }
    if let Some(motions) = &args.motions {
        cfg.motions = MotionSet::parse(motions)?;
    }
    cfg.validate()?;
    let ds = load_dataset(&args.input)?;
    let (fixed, report) = rectify_dataset(&ds, &cfg, &ConstraintTable::default())?;
    save_dataset(&fixed, &args.out)?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    let violations: usize = report.stats.values().map(|s| s.violations).sum();
    println!(
        "rectified {} frames (alpha {}, motions {}): {} violations corrected",
        report.frames_processed, cfg.alpha, cfg.motions, violations
    );
    Ok(())
}

fn run_oversample(args: OversampleArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.smote;
    if let Some(k) = args.k {
        cfg.k_neighbors = k;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let ds = load_dataset(&args.input)?;
    let padded = pad_to_max_frames(&ds)?;
    let balanced = smote_balance(&padded, &cfg)?;
    save_dataset(&balanced, &args.out)?;
    println!("balanced {} -> {} sequences", ds.len(), balanced.len());
    Ok(())
}

fn run_augment(args: AugmentArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?.augment;
    cfg.enabled = true;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = args.prob {
        cfg.apply_probability = p;
    }
    if let Some(v) = args.rotate_max {
        cfg.rotate_max_deg = v;
    }
    if let Some(v) = args.squeeze_max {
        cfg.squeeze_max_frac = v;
    }
    if let Some(v) = args.perspective_max {
        cfg.perspective_max_frac = v;
    }
    if let Some(v) = args.arm_rotate_max {
        cfg.arm_rotate_max_deg = v;
    }
    if let Some(v) = args.sigma {
        cfg.gaussian_sigma = v;
    }
    cfg.validate()?;
    let ds = load_dataset(&args.input)?;
    let sequences = ds
        .sequences
        .iter()
        .enumerate()
        .map(|(i, seq)| augment(seq, &cfg, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let out = LabeledDataset::new(sequences, ds.num_classes)?;
    save_dataset(&out, &args.out)?;
    println!("augmented {} sequences", out.len());
    Ok(())
}

fn run_train(args: TrainArgs) -> CliResult<()> {
    let mut run_cfg = RunConfig::load(args.config.as_deref())?;
    let ds = load_dataset(&args.data)?;
    let padded = pad_to_max_frames(&ds)?;

    let model = &mut run_cfg.model;
    model.num_classes = padded.num_classes;
    model.max_frames = args.max_frames.unwrap_or(padded.max_frames());
    if let Some(d) = args.d_model {
        model.d_model = d;
    }
    if let Some(l) = args.encoder_layers {
        model.encoder_layers = l;
    }
    if let Some(l) = args.decoder_layers {
        model.decoder_layers = l;
    }
    if let Some(f) = args.ffn_dim {
        model.ffn_dim = f;
    }
    if let Some(mode) = &args.attention {
        model.attention_mode = parse_attention_mode(mode)?;
    }
    if let Some(a) = args.feature_isolation {
        model.feature_isolation = a;
    }

    let tc = &mut run_cfg.train;
    if let Some(e) = args.epochs {
        tc.epochs = e;
        // Milestones past the new horizon would never fire.
        tc.milestones.retain(|&m| m <= e);
    }
    if let Some(lr) = args.lr {
        tc.lr0 = lr;
    }
    if let Some(seed) = args.seed {
        tc.seed = seed;
    }
    if let Some(v) = args.rectify {
        tc.rectify = v;
    }
    if let Some(v) = args.smote {
        tc.smote = v;
    }
    if let Some(v) = args.augment {
        tc.augment = v;
    }
    if args.train_internal_classifiers {
        tc.train_internal_classifiers = true;
    }
    if let Some(alpha) = args.alpha {
        run_cfg.rectify.alpha = alpha;
    }
    run_cfg.validate()?;

    let pre = siformer::train::PreprocessConfig {
        rectify: run_cfg.rectify,
        smote: run_cfg.smote,
        augment: run_cfg.augment,
    };
    let outcome = train(&padded, &run_cfg.model, &run_cfg.train, &pre)?;
    save_checkpoint(&outcome.params, &outcome.recipe, &args.out)?;
    if let Some(path) = &args.history {
        write_json(path, &outcome.history)?;
    }
    let last = outcome.history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs: loss {:.4}, accuracy {}%, checkpoint {}",
        outcome.history.epochs.len(),
        last.loss,
        percent(last.accuracy),
        args.out.display()
    );
    Ok(())
}

fn parse_attention_mode(value: &str) -> CliResult<siformer::attention::AttnMode> {
    match value {
        "full" => Ok(siformer::attention::AttnMode::Full),
        "probsparse" => Ok(siformer::attention::AttnMode::ProbSparse),
        other => Err(CliError::validation(format!(
            "--attention must be full or probsparse, got '{other}'"
        ))),
    }
}

type EvalInputs = (
    SiformerParams,
    siformer::model::PreprocessRecipe,
    LabeledDataset,
    siformer::infer::EarlyExitConfig,
);

/// Loads checkpoint + raw (padded) dataset + exit config. The
/// checkpoint's preprocessing recipe is returned for the caller to
/// apply where appropriate.
fn load_eval_inputs(
    config: Option<&Path>,
    ckpt: &Path,
    data: &Path,
    flags: &ExitFlags,
) -> CliResult<EvalInputs> {
    let run_cfg = RunConfig::load(config)?;
    let (params, recipe) = load_checkpoint(ckpt)?;
    let ds = load_dataset(data)?;
    let padded = pad_to_max_frames(&ds)?;
    let mut exit_cfg = run_cfg.exit;
    flags.apply(&mut exit_cfg)?;
    exit_cfg.validate()?;
    Ok((params, recipe, padded, exit_cfg))
}

fn run_eval(args: EvalArgs) -> CliResult<()> {
    let (params, recipe, ds, exit_cfg) =
        load_eval_inputs(args.config.as_deref(), &args.ckpt, &args.data, &args.exit)?;
    let (metrics, _) = evaluate(&recipe.apply(&ds)?, &params, &exit_cfg)?;
    print!("{}", render_metrics_table(&metrics));
    if let Some(path) = &args.report {
        write_json(path, &metrics)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct InferenceRecord {
    index: usize,
    label: Option<usize>,
    predicted: usize,
    exit_layer: Option<usize>,
    flops: u64,
    wall_time_s: f64,
}

fn run_infer(args: InferArgs) -> CliResult<()> {
    let (params, recipe, raw, exit_cfg) =
        load_eval_inputs(args.config.as_deref(), &args.ckpt, &args.data, &args.exit)?;
    let ds = recipe.apply(&raw)?;
    let mut records = Vec::with_capacity(ds.len());
    for (index, seq) in ds.sequences.iter().enumerate() {
        let (predicted, trace) = infer_adaptive(seq, &params, &exit_cfg)?;
        records.push(InferenceRecord {
            index,
            label: seq.label,
            predicted,
            exit_layer: trace.exit_layer,
            flops: trace.flops,
            wall_time_s: trace.wall_time_s,
        });
    }
    for r in &records {
        println!(
            "#{:<5} predicted {:<4} exit {:<8} flops {}",
            r.index,
            r.predicted,
            r.exit_layer.map_or("full".to_string(), |l| format!("layer {l}")),
            r.flops
        );
    }
    if let Some(path) = &args.report {
        write_json(path, &records)?;
    }
    Ok(())
}

fn parse_parts(value: &str) -> CliResult<Vec<Part>> {
    let mut parts = Vec::new();
    for token in value.split(',').filter(|t| !t.trim().is_empty()) {
        parts.push(token.trim().parse::<Part>().map_err(CliError::from)?);
    }
    if parts.is_empty() {
        return Err(CliError::validation("--parts must name at least one part"));
    }
    Ok(parts)
}

fn parse_seeds(value: &str) -> CliResult<Vec<u64>> {
    let mut seeds = Vec::new();
    for token in value.split(',').filter(|t| !t.trim().is_empty()) {
        seeds.push(token.trim().parse::<u64>().map_err(|_| {
            CliError::validation(format!("invalid seed '{token}' in --seeds"))
        })?);
    }
    if seeds.is_empty() {
        return Err(CliError::validation("--seeds must contain at least one seed"));
    }
    Ok(seeds)
}

fn run_robustness(args: RobustnessArgs) -> CliResult<()> {
    let (params, recipe, ds, exit_cfg) =
        load_eval_inputs(args.config.as_deref(), &args.ckpt, &args.data, &args.exit)?;
    let parts = parse_parts(&args.parts)?;
    let seeds = parse_seeds(&args.seeds)?;
    let rows = robustness_sweep(&ds, &params, &recipe, &exit_cfg, &parts, &seeds)?;
    let mut csv = String::from("part,k,seed,top1\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{},{}\n", row.part, row.removed, row.seed, percent(row.top1)));
    }
    write_atomic(&args.csv, csv.as_bytes())?;
    if let Some(path) = &args.report {
        write_json(path, &rows)?;
    }
    println!("wrote {} rows to {}", rows.len(), args.csv.display());
    Ok(())
}

#[derive(Serialize)]
struct FlopsReport {
    frames: usize,
    exit: Option<ExitPoint>,
    flops: u64,
    gflops: f64,
}

fn run_flops(args: FlopsArgs) -> CliResult<()> {
    let run_cfg = RunConfig::load(args.config.as_deref())?;
    let exit = match (args.exit_site.as_deref(), args.exit_layer) {
        (None, None) => None,
        (Some("encoder"), Some(l)) => Some(ExitPoint::Encoder(l)),
        (Some("decoder"), Some(l)) => Some(ExitPoint::Decoder(l)),
        (Some(other), Some(_)) => {
            return Err(CliError::validation(format!(
                "--exit-site must be encoder or decoder, got '{other}'"
            )))
        }
        _ => {
            return Err(CliError::validation(
                "--exit-site and --exit-layer must be given together",
            ))
        }
    };
    let flops = count_flops(&run_cfg.model, args.frames, exit)?;
    let report = FlopsReport {
        frames: args.frames,
        exit,
        flops,
        gflops: flops as f64 / 1e9,
    };
    println!("flops {} ({:.4} G)", report.flops, report.gflops);
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn parse_alphas(value: &str) -> CliResult<Vec<f64>> {
    let mut alphas = Vec::new();
    for token in value.split(',').filter(|t| !t.trim().is_empty()) {
        let alpha: f64 = token.trim().parse().map_err(|_| {
            CliError::validation(format!("invalid alpha '{token}' in --alphas"))
        })?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CliError::validation(format!("alpha {alpha} outside [0, 1]")));
        }
        alphas.push(alpha);
    }
    if alphas.is_empty() {
        return Err(CliError::validation("--alphas must contain at least one value"));
    }
    Ok(alphas)
}

fn run_alphasweep(args: AlphaSweepArgs) -> CliResult<()> {
    let mut run_cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(motions) = &args.motions {
        run_cfg.rectify.motions = MotionSet::parse(motions)?;
    }
    if let Some(seed) = args.seed {
        run_cfg.train.seed = seed;
    }
    let alphas = parse_alphas(&args.alphas)?;
    let ds = load_dataset(&args.data)?;
    let padded = pad_to_max_frames(&ds)?;
    let (train_ds, test_ds) =
        siformer::data::split_holdout(&padded, args.holdout_frac, run_cfg.train.seed)?;

    run_cfg.model.num_classes = padded.num_classes;
    run_cfg.model.max_frames = padded.max_frames();
    run_cfg.train.rectify = true;
    run_cfg.validate()?;

    let mut csv = String::from("alpha,motions,top1\n");
    for &alpha in &alphas {
        let mut rectify_cfg = run_cfg.rectify;
        rectify_cfg.alpha = alpha;
        let pre = siformer::train::PreprocessConfig {
            rectify: rectify_cfg,
            smote: run_cfg.smote,
            augment: run_cfg.augment,
        };
        let outcome = train(&train_ds, &run_cfg.model, &run_cfg.train, &pre)?;
        // Evaluation sees the same preprocessing training did, and runs
        // the full path so the sweep isolates the alpha effect.
        let eval_ds = outcome.recipe.apply(&test_ds)?;
        let (metrics, _) = evaluate(&eval_ds, &outcome.params, &EarlyExitConfig::off())?;
        csv.push_str(&format!(
            "{alpha},\"{}\",{}\n",
            rectify_cfg.motions,
            percent(metrics.top1)
        ));
        println!("alpha {alpha}: top1 {}%", percent(metrics.top1));
    }
    write_atomic(&args.csv, csv.as_bytes())?;
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    use siformer::attention::{AttnMode, PositionalMode};
    use siformer::model::SiformerConfig;

    let cfg = SiformerConfig {
        d_model: args.d,
        encoder_layers: 1,
        decoder_layers: 1,
        left_heads: 3,
        right_heads: 3,
        body_heads: 2,
        decoder_heads: 6,
        ffn_dim: 2 * args.d,
        attention_mode: AttnMode::Full,
        sampling_factor: 5.0,
        attention_seed: args.seed,
        use_padding_mask: true,
        positional: PositionalMode::FrameWise,
        distilling: false,
        feature_isolation: true,
        max_frames: args.frames,
        num_classes: args.classes,
    };
    cfg.validate()?;
    let params = SiformerParams::init(&cfg, args.seed)?;
    let spec = SynthSpec::new(args.classes.max(2), 1, args.frames, 0.01, siformer::rng::mix(args.seed, 0x6763));
    let ds = generate_synthetic_dataset(&spec)?;
    let sample = &ds.sequences[0];
    let label = sample.label.expect("generated sample is labeled");

    let leaves = params.named_params();
    let report = grad_check(
        &leaves,
        || {
            let pass = params.forward(sample)?;
            cross_entropy(&pass.logits, label)
        },
        args.eps,
        args.tol,
    )?;
    println!("{report}");
    if report.passed {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "gradient check failed: max relative error {:.3e} exceeds tol {:.1e}",
            report.max_rel_error, args.tol
        )))
    }
}
