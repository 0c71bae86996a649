//! Command-line entry point: `train`, `generate`, `evaluate`, and `ablate`
//! subcommands wiring corpus → training → inference → evaluation.
//!
//! All randomness flows from one root seed, fanned out deterministically to
//! corpus synthesis, splitting, parameter initialization, batch shuffling,
//! and DIV pair sampling. Artifacts land in the output directory:
//! `dataset.jsonl` (synthetic runs), `split.json`, `vocab.json`,
//! `run_config.json`, `model.ckpt`, `train_log.jsonl`, `generations.jsonl`,
//! `metrics.json`, `ablation.json`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, encode_sample, load_records, save_records, split, synth_generate, CorpusError,
    EncodedSample, InteractionRecord, Split, SplitSpec, Vocabulary,
};
use crate::evaluation::{compute_report, MetricsReport};
use crate::inference::{generate_for_records, GenerationResult};
use crate::model::{load_checkpoint, MaskMode, ModelParams, PeterConfig};
use crate::training::{train, AblationMode, EarlyStopMetric, TrainError, TrainSchedule};

/// Errors grouped by exit code: usage/config = 1, data = 2, numeric = 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        match e {
            crate::model::ModelError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<crate::inference::InferenceError> for CliError {
    fn from(e: crate::inference::InferenceError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::evaluation::EvalError> for CliError {
    fn from(e: crate::evaluation::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_data(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Flat run configuration; every field has a default matching the standard
/// training recipe and any file key overrides it. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub rating_min: f64,
    pub rating_max: f64,
    pub seed: u64,
    pub vocab_cap: usize,
    pub d: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub word_budget: usize,
    pub mask_mode: MaskMode,
    pub use_features: bool,
    pub lambda_e: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub scale_full_d: bool,
    pub lr: f64,
    pub clip: f64,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub max_decays: u32,
    pub max_epochs: usize,
    pub early_stop: EarlyStopMetric,
    pub context_k: usize,
    pub div_pair_budget: usize,
    pub out_dir: PathBuf,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_features: usize,
    pub synth_records_per_user: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            rating_min: 1.0,
            rating_max: 5.0,
            seed: 42,
            vocab_cap: 20_000,
            d: 512,
            ffn_dim: 2048,
            n_layers: 2,
            n_heads: 2,
            word_budget: 15,
            mask_mode: MaskMode::Peter,
            use_features: false,
            lambda_e: 1.0,
            lambda_c: 1.0,
            lambda_r: 0.1,
            scale_full_d: false,
            lr: 1.0,
            clip: 1.0,
            batch_size: 128,
            decay_factor: 0.25,
            max_decays: 5,
            max_epochs: 100,
            early_stop: EarlyStopMetric::TotalObjective,
            context_k: 15,
            div_pair_budget: 1_000_000,
            out_dir: PathBuf::from("peter-out"),
            synth_users: 50,
            synth_items: 50,
            synth_features: 20,
            synth_records_per_user: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn rating_bounds(&self) -> (f64, f64) {
        (self.rating_min, self.rating_max)
    }

    fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            initial_lr: self.lr,
            clip_threshold: self.clip,
            batch_size: self.batch_size,
            decay_factor: self.decay_factor,
            max_decays: self.max_decays,
            max_epochs: self.max_epochs,
            early_stop: self.early_stop,
        }
    }
}

/// Deterministic per-purpose seed derivation from the root seed.
pub fn subseed(root: u64, domain: &str) -> u64 {
    let mut h = root ^ 0x9E37_79B9_7F4A_7C15;
    for b in domain.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01B3);
    }
    h
}

#[derive(Debug, Parser)]
#[command(
    name = "peter",
    about = "Personalized transformer for explainable recommendation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model: split, vocabulary, encoding, SGD with lr decay.
    Train(TrainArgs),
    /// Decode every test pair of a trained run into a generations file.
    Generate(GenerateArgs),
    /// Compute the metric report over a generations file.
    Evaluate(EvaluateArgs),
    /// Train the base model plus ablations and print a comparison.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the built-in synthetic corpus generator instead of a dataset file.
    #[arg(long)]
    pub synth: bool,
    /// Train without feature words even if records carry them.
    #[arg(long)]
    pub no_features: bool,
    /// Mask mode override.
    #[arg(long, value_parser = parse_mask)]
    pub mask: Option<MaskMode>,
    /// Epoch cap override.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory holding the training artifacts; individual paths below
    /// default to files inside it.
    #[arg(long, default_value = "peter-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Refuse feature inputs (errors when the model was trained with them).
    #[arg(long)]
    pub no_features: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "peter-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub generations: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Seed for DIV pair sampling on oversized corpora.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Pair budget before DIV switches to sampling.
    #[arg(long, default_value_t = 1_000_000)]
    pub div_pair_budget: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated list: disable_lc, disable_lr, left_to_right.
    #[arg(long, value_delimiter = ',')]
    pub modes: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub synth: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

fn parse_mask(s: &str) -> Result<MaskMode, String> {
    s.parse()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => cmd_train(&args).map(|_| ()),
        Command::Generate(args) => cmd_generate(&args).map(|_| ()),
        Command::Evaluate(args) => cmd_evaluate(&args).map(|_| ()),
        Command::Ablate(args) => cmd_ablate(&args),
    }
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if args.no_features {
        config.use_features = false;
    }
    if let Some(mask) = args.mask {
        config.mask_mode = mask;
    }
    if let Some(max_epochs) = args.max_epochs {
        config.max_epochs = max_epochs;
    }
    Ok(config)
}

fn obtain_records(config: &RunConfig, synth: bool, out_dir: &Path) -> Result<Vec<InteractionRecord>, CliError> {
    let records = if synth {
        let records = synth_generate(
            config.synth_users,
            config.synth_items,
            config.synth_features,
            config.synth_records_per_user,
            subseed(config.seed, "synth"),
        );
        save_records(&records, &out_dir.join("dataset.jsonl"))?;
        records
    } else {
        let path = config.dataset.as_ref().ok_or_else(|| {
            CliError::Usage("no dataset: set `dataset` in the config or pass --synth".into())
        })?;
        load_records(path)?
    };
    if records.is_empty() {
        return Err(CliError::Data("dataset has no records".into()));
    }
    for (i, rec) in records.iter().enumerate() {
        if rec.rating < config.rating_min || rec.rating > config.rating_max {
            return Err(CliError::Data(format!(
                "record {i}: rating {} outside [{}, {}]",
                rec.rating, config.rating_min, config.rating_max
            )));
        }
    }
    Ok(records)
}

fn encode_all(
    records: &[InteractionRecord],
    indices: &[usize],
    vocab: &Vocabulary,
    config: &RunConfig,
) -> Result<Vec<EncodedSample>, CliError> {
    indices
        .iter()
        .map(|&i| {
            encode_sample(&records[i], vocab, config.use_features, config.word_budget)
                .map_err(CliError::from)
        })
        .collect()
}

fn build_model_config(config: &RunConfig, vocab: &Vocabulary, records: &[InteractionRecord]) -> PeterConfig {
    let max_feat = if config.use_features {
        records
            .iter()
            .map(|r| r.feature_words().len())
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    PeterConfig {
        n_users: vocab.n_users(),
        n_items: vocab.n_items(),
        vocab_size: vocab.n_words(),
        max_seq_len: 2 + max_feat + 1 + config.word_budget,
        d: config.d,
        ffn_dim: config.ffn_dim,
        n_layers: config.n_layers,
        n_heads: config.n_heads,
        word_budget: config.word_budget,
        mask_mode: config.mask_mode,
        use_features: config.use_features,
        lambda_e: config.lambda_e,
        lambda_c: config.lambda_c,
        lambda_r: config.lambda_r,
        scale_full_d: config.scale_full_d,
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub epochs_run: usize,
    pub best_valid: f64,
}

/// Full training pipeline: records → split → vocabulary → encode → train.
/// Writes every artifact into the configured output directory.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let config = resolve_train_config(args)?;
    train_into(&config, args.synth, &config.out_dir.clone())
}

fn train_into(config: &RunConfig, synth: bool, out_dir: &Path) -> Result<TrainOutcome, CliError> {
    fs::create_dir_all(out_dir).map_err(io_data(out_dir))?;
    let records = obtain_records(config, synth, out_dir)?;

    if config.use_features {
        let lens: HashSet<usize> = records.iter().map(|r| r.feature_words().len()).collect();
        if lens.len() > 1 {
            return Err(CliError::Data(
                "feature token counts vary across records; batches need one \
                 sequence length — drop --use-features or normalize the data"
                    .into(),
            ));
        }
    }

    let split_spec = SplitSpec::new(subseed(config.seed, "split"));
    let parts = split(&records, &split_spec)?;
    let split_path = out_dir.join("split.json");
    fs::write(&split_path, parts.to_json()).map_err(io_data(&split_path))?;

    let train_records: Vec<InteractionRecord> =
        parts.train.iter().map(|&i| records[i].clone()).collect();
    let vocab = build_vocab(&train_records, config.vocab_cap)?;
    let vocab_path = out_dir.join("vocab.json");
    fs::write(&vocab_path, vocab.to_json()).map_err(io_data(&vocab_path))?;

    let train_samples = encode_all(&records, &parts.train, &vocab, config)?;
    let valid_samples = encode_all(&records, &parts.valid, &vocab, config)?;

    let model_config = build_model_config(config, &vocab, &records);
    model_config.validate()?;
    let mut params = ModelParams::init(&model_config, subseed(config.seed, "init"));

    let ckpt_path = out_dir.join("model.ckpt");
    let report = train(
        &mut params,
        &model_config,
        &train_samples,
        &valid_samples,
        &config.schedule(),
        subseed(config.seed, "batch"),
        &ckpt_path,
    )?;

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(io_data(&log_path))?;
    for epoch in &report.epochs {
        let line = serde_json::to_string(epoch)
            .map_err(|e| CliError::Data(format!("log serialization: {e}")))?;
        writeln!(log, "{line}").map_err(io_data(&log_path))?;
        eprintln!(
            "epoch {:>3}  lr {:<10.6} train J {:.4}  valid J {:.4}{}",
            epoch.epoch,
            epoch.lr,
            epoch.train_j,
            epoch.valid_j,
            if epoch.decayed { "  (decayed)" } else { "" }
        );
    }

    let rc_path = out_dir.join("run_config.json");
    let rc_json = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::Data(format!("config serialization: {e}")))?;
    fs::write(&rc_path, rc_json).map_err(io_data(&rc_path))?;

    eprintln!(
        "trained {} epochs, best validation objective {:.4}, checkpoint {}",
        report.state.epochs_run,
        report.state.best_valid,
        ckpt_path.display()
    );
    Ok(TrainOutcome {
        out_dir: out_dir.to_path_buf(),
        epochs_run: report.state.epochs_run,
        best_valid: report.state.best_valid,
    })
}

fn read_generations(path: &Path) -> Result<Vec<GenerationResult>, CliError> {
    let text = fs::read_to_string(path).map_err(io_data(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: GenerationResult = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(g);
    }
    Ok(out)
}

/// Decode every test pair of a trained run into `generations.jsonl`.
pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf, CliError> {
    let out_dir = &args.out;
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir.join("model.ckpt"));
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| out_dir.join("split.json"));
    let vocab_path = args.vocab.clone().unwrap_or_else(|| out_dir.join("vocab.json"));
    let dataset_path = args
        .dataset
        .clone()
        .unwrap_or_else(|| out_dir.join("dataset.jsonl"));

    let (model_config, params) = load_checkpoint(&ckpt_path)?;
    if args.no_features && model_config.use_features {
        return Err(CliError::Usage(
            "this model was trained with features; they are required at \
             generation time (--no-features is not valid here)"
                .into(),
        ));
    }

    let vocab_text = fs::read_to_string(&vocab_path).map_err(io_data(&vocab_path))?;
    let vocab = Vocabulary::from_json(&vocab_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", vocab_path.display())))?;
    if vocab.n_users() != model_config.n_users
        || vocab.n_items() != model_config.n_items
        || vocab.n_words() != model_config.vocab_size
    {
        return Err(CliError::Data(format!(
            "vocabulary ({} users, {} items, {} words) does not match the \
             checkpoint config ({}, {}, {})",
            vocab.n_users(),
            vocab.n_items(),
            vocab.n_words(),
            model_config.n_users,
            model_config.n_items,
            model_config.vocab_size
        )));
    }

    let records = load_records(&dataset_path)?;
    let manifest_text = fs::read_to_string(&manifest_path).map_err(io_data(&manifest_path))?;
    let manifest = Split::from_json(&manifest_text)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    let test_records: Vec<&InteractionRecord> = manifest
        .test
        .iter()
        .map(|&i| {
            records.get(i).ok_or_else(|| {
                CliError::Data(format!(
                    "split manifest references record {i} but the dataset has {}",
                    records.len()
                ))
            })
        })
        .collect::<Result<_, _>>()?;

    // Rating bounds for report clamping; recover them from the run config
    // when present, else default to the 1-5 scale.
    let rc_path = out_dir.join("run_config.json");
    let bounds = match fs::read_to_string(&rc_path) {
        Ok(text) => serde_json::from_str::<RunConfig>(&text)
            .map(|rc| rc.rating_bounds())
            .unwrap_or((1.0, 5.0)),
        Err(_) => (1.0, 5.0),
    };
    let context_k = match fs::read_to_string(&rc_path) {
        Ok(text) => serde_json::from_str::<RunConfig>(&text)
            .map(|rc| rc.context_k)
            .unwrap_or(15),
        Err(_) => 15,
    };

    let generations = generate_for_records(
        &test_records,
        &params,
        &vocab,
        &model_config,
        bounds,
        context_k,
    )?;

    let gen_path = out_dir.join("generations.jsonl");
    let mut file = fs::File::create(&gen_path).map_err(io_data(&gen_path))?;
    for g in &generations {
        let line = serde_json::to_string(g)
            .map_err(|e| CliError::Data(format!("generation serialization: {e}")))?;
        writeln!(file, "{line}").map_err(io_data(&gen_path))?;
    }
    eprintln!(
        "decoded {} test pairs into {}",
        generations.len(),
        gen_path.display()
    );
    Ok(gen_path)
}

/// Compute the metric report for a generations file against its dataset.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport, CliError> {
    let gen_path = args
        .generations
        .clone()
        .unwrap_or_else(|| args.out.join("generations.jsonl"));
    let dataset_path = args
        .dataset
        .clone()
        .unwrap_or_else(|| args.out.join("dataset.jsonl"));

    let generations = read_generations(&gen_path)?;
    if generations.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no generations",
            gen_path.display()
        )));
    }
    let records = load_records(&dataset_path)?;
    let known_pairs: HashSet<(&str, &str)> = records
        .iter()
        .map(|r| (r.user.as_str(), r.item.as_str()))
        .collect();
    for g in &generations {
        if !known_pairs.contains(&(g.user.as_str(), g.item.as_str())) {
            return Err(CliError::Data(format!(
                "generation pair ({}, {}) does not occur in the dataset",
                g.user, g.item
            )));
        }
    }
    let universe: BTreeSet<Vec<String>> =
        records.iter().map(|r| r.feature_words()).collect();

    let report = compute_report(
        &generations,
        &universe,
        args.div_pair_budget,
        subseed(args.seed, "div"),
    )?;
    println!("{}", report.render_table());

    let metrics_path = args.out.join("metrics.json");
    if let Some(parent) = metrics_path.parent() {
        let _ = fs::create_dir_all(parent);
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("report serialization: {e}")))?;
    fs::write(&metrics_path, json).map_err(io_data(&metrics_path))?;
    Ok(report)
}

/// Comparison row arrows: performance increase (accounting for
/// lower-is-better metrics) is ↑, decrease ↓, tie blank.
fn arrow(value: f64, base: f64, lower_is_better: bool) -> &'static str {
    if value == base {
        return "";
    }
    let better = if lower_is_better {
        value < base
    } else {
        value > base
    };
    if better {
        "↑"
    } else {
        "↓"
    }
}

fn ablation_row(label: &str, report: &MetricsReport, base: Option<&MetricsReport>) -> String {
    let cell = |v: f64, b: Option<f64>, lower: bool, prec: usize| -> String {
        let arrow = match b {
            Some(base_v) => arrow(v, base_v, lower),
            None => "",
        };
        format!("{v:.prec$}{arrow}")
    };
    format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}",
        label,
        cell(report.fmr, base.map(|b| b.fmr), false, 3),
        cell(report.fcr, base.map(|b| b.fcr), false, 3),
        cell(report.div, base.map(|b| b.div), true, 2),
        cell(report.usr, base.map(|b| b.usr), false, 3),
        cell(report.bleu1, base.map(|b| b.bleu1), false, 2),
        cell(report.bleu4, base.map(|b| b.bleu4), false, 2),
        cell(report.rmse, base.map(|b| b.rmse), true, 3),
        cell(report.mae, base.map(|b| b.mae), true, 3),
    )
}

/// Train the base config plus each ablation with a shared seed and split,
/// evaluate all of them, and print a comparison table.
pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    if args.modes.is_empty() {
        return Err(CliError::Usage(
            "pass --modes with at least one of disable_lc, disable_lr, left_to_right".into(),
        ));
    }
    let modes: Vec<AblationMode> = args
        .modes
        .iter()
        .map(|m| m.parse().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;

    let base_args = TrainArgs {
        config: args.config.clone(),
        seed: args.seed,
        out: args.out.clone(),
        synth: args.synth,
        no_features: false,
        mask: None,
        max_epochs: args.max_epochs,
    };
    let base_run = resolve_train_config(&base_args)?;
    let root_out = base_run.out_dir.clone();

    let run_one = |run_config: &RunConfig, dir: &Path| -> Result<MetricsReport, CliError> {
        train_into(run_config, args.synth, dir)?;
        let gen_args = GenerateArgs {
            out: dir.to_path_buf(),
            checkpoint: None,
            manifest: None,
            vocab: None,
            dataset: if args.synth {
                None
            } else {
                run_config.dataset.clone().map(PathBuf::from)
            },
            no_features: false,
            seed: None,
        };
        cmd_generate(&gen_args)?;
        let eval_args = EvaluateArgs {
            out: dir.to_path_buf(),
            generations: None,
            dataset: if args.synth {
                None
            } else {
                run_config.dataset.clone().map(PathBuf::from)
            },
            seed: run_config.seed,
            div_pair_budget: run_config.div_pair_budget,
        };
        cmd_evaluate(&eval_args)
    };

    eprintln!("training base configuration");
    let base_report = run_one(&base_run, &root_out.join("base"))?;
    let base_manifest =
        fs::read(root_out.join("base").join("split.json")).map_err(io_data(&root_out))?;

    let mut mode_reports: BTreeMap<String, MetricsReport> = BTreeMap::new();
    for mode in &modes {
        eprintln!("training ablation {}", mode.label());
        let mut run_config = base_run.clone();
        // mirror the model-level config delta onto the run config
        match mode {
            AblationMode::DisableContext => run_config.lambda_c = 0.0,
            AblationMode::DisableRating => run_config.lambda_r = 0.0,
            AblationMode::LeftToRight => run_config.mask_mode = MaskMode::LeftToRight,
        }
        let dir = root_out.join(mode.label());
        let report = run_one(&run_config, &dir)?;
        let manifest = fs::read(dir.join("split.json")).map_err(io_data(&dir))?;
        if manifest != base_manifest {
            return Err(CliError::Data(format!(
                "ablation {} produced a different split manifest than the base run",
                mode.label()
            )));
        }
        mode_reports.insert(mode.label().to_string(), report);
    }

    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8}",
        "", "FMR", "FCR", "DIV", "USR", "BLEU-1", "BLEU-4", "RMSE", "MAE"
    );
    for mode in &modes {
        let report = &mode_reports[mode.label()];
        println!("{}", ablation_row(mode.label(), report, Some(&base_report)));
    }
    println!("{}", ablation_row("peter", &base_report, None));

    let comparison = serde_json::json!({
        "base": base_report,
        "ablations": mode_reports,
    });
    let path = root_out.join("ablation.json");
    fs::write(&path, serde_json::to_string_pretty(&comparison).unwrap())
        .map_err(io_data(&path))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
