//! `scvad` command line: synth, train, detect, eval, ablate.
//!
//! Every command validates its inputs before creating anything under
//! `--output`, writes its artifacts plus one `manifest.json`, and reports
//! failures as a single JSON line on stderr with a class-specific exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detector::{detect_from, read_verdicts, write_verdicts, ConsistencyConfig};
use crate::error::{Error, Result};
use crate::evaluator::{ablation_csv, ablation_table, emit_curves, run_ablation, verdict_labels, AblationSpec};
use crate::feature_io::{generate_synthetic, read_stream, write_stream, FeatureStream, SynthConfig};
use crate::trainer::{train_few_shot, TrainArtifact, TrainConfig};
use crate::transformer::{ModelConfig, Readout, SelfContext};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STREAM_FILE: &str = "stream.scvf";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const THREADS_ENV: &str = "SCVAD_THREADS";

/// Process exit codes, following the BSD `sysexits` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 64,
    Data = 65,
    Runtime = 70,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitStatus::Success => "ok",
            ExitStatus::Usage => "usage",
            ExitStatus::Data => "data",
            ExitStatus::Runtime => "runtime",
        }
    }

    pub fn classify(err: &Error) -> Self {
        match err {
            Error::InvalidConfig(_) => ExitStatus::Usage,
            Error::Divergence { .. } | Error::Contract(_) => ExitStatus::Runtime,
            Error::Shape { .. }
            | Error::NonFinite { .. }
            | Error::Format(_)
            | Error::Truncated { .. }
            | Error::UndefinedAuc
            | Error::Io(_)
            | Error::Json(_) => ExitStatus::Data,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "scvad", version, about = "Few-shot anomaly detection on frame-feature streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled synthetic stream.
    Synth(SynthArgs),
    /// Fit the predictor to the first N frames of a stream.
    Train(TrainArgs),
    /// Score and flag every frame after the training prefix.
    Detect(DetectArgs),
    /// Frame AUC, ROC and score/loss curves for a verdict file.
    Eval(EvalArgs),
    /// Train and evaluate the four ablation models.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Leading coordinates that count as spatial features (default dim/2).
    #[arg(long)]
    pub spatial_dim: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub length: usize,
    /// Anomalous frames as an inclusive 1-based range `START-END`; repeatable.
    #[arg(long = "span", value_parser = parse_span)]
    pub spans: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 1.0)]
    pub magnitude: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    #[arg(long, default_value_t = 2)]
    pub harmonics: usize,
}

/// Training knobs shared by `train` and `ablate`. Unset flags fall back to
/// `--config`, then to the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct TrainingFlags {
    /// JSON file with any of the [`RunConfig`] fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_shots: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Standardise features with statistics from the training frames.
    #[arg(long)]
    pub normalize: bool,
    /// Pool the decoder output by averaging positions instead of taking the last.
    #[arg(long)]
    pub mean_readout: bool,
}

#[derive(Debug, Args, Default)]
pub struct ConsistencyFlags {
    #[arg(long)]
    pub consistency_k: Option<usize>,
    #[arg(long)]
    pub consistency_q: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long)]
    pub no_self_context: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub consistency: ConsistencyFlags,
    /// First 1-based frame to score (default: right after the training prefix).
    #[arg(long)]
    pub start_index: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labelled stream the verdicts were computed on.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory written by `train` (for the loss curve).
    #[arg(long)]
    pub model: PathBuf,
    /// Verdict CSV written by `detect`.
    #[arg(long)]
    pub verdicts: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub consistency: ConsistencyFlags,
}

fn parse_span(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| format!("span {s:?} is not START-END"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("span {s:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub n_shots: Option<usize>,
    pub window: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub model_dim: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub normalize: Option<bool>,
    pub readout: Option<Readout>,
    pub self_context: Option<bool>,
    pub consistency_k: Option<usize>,
    pub consistency_q: Option<usize>,
    pub start_index: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", path.display())))
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or(Ok(Self::default()), Self::load)
    }
}

/// Resolved training settings: flags, then config file, then defaults.
fn resolve_training(
    flags: &TrainingFlags,
    file: &RunConfig,
    feature_dim: usize,
) -> (ModelConfig, TrainConfig) {
    let defaults = TrainConfig::default();
    let seed = flags.seed.or(file.seed).unwrap_or(defaults.seed);
    let window = flags.window.or(file.window).unwrap_or(defaults.window);
    let model_dim = flags.model_dim.or(file.model_dim).unwrap_or(ModelConfig::new(feature_dim).model_dim);
    let base = ModelConfig::with_model_dim(feature_dim, model_dim);
    let readout = if flags.mean_readout {
        Readout::Mean
    } else {
        file.readout.unwrap_or(base.readout)
    };
    let model = ModelConfig {
        heads: flags.heads.or(file.heads).unwrap_or(base.heads),
        layers: flags.layers.or(file.layers).unwrap_or(base.layers),
        mlp_hidden: file.mlp_hidden.unwrap_or(base.mlp_hidden),
        window,
        readout,
        seed,
        ..base
    };
    let train = TrainConfig {
        n_shots: flags.n_shots.or(file.n_shots).unwrap_or(defaults.n_shots),
        window,
        epochs: flags.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        lr: flags.lr.or(file.lr).unwrap_or(defaults.lr),
        beta1: file.beta1.unwrap_or(defaults.beta1),
        beta2: file.beta2.unwrap_or(defaults.beta2),
        seed,
        normalize: flags.normalize || file.normalize.unwrap_or(defaults.normalize),
    };
    (model, train)
}

fn resolve_consistency(flags: &ConsistencyFlags, file: &RunConfig) -> ConsistencyConfig {
    let d = ConsistencyConfig::default();
    ConsistencyConfig {
        half_window: flags.consistency_k.or(file.consistency_k).unwrap_or(d.half_window),
        min_neighbors: flags.consistency_q.or(file.consistency_q).unwrap_or(d.min_neighbors),
    }
}

/// One per command run, written last into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration_ms: u128,
}

struct Run {
    command: &'static str,
    started: Instant,
}

impl Run {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
        }
    }

    fn finish(
        self,
        dir: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            inputs,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_ms: self.started.elapsed().as_millis(),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )))
    }
}

fn load_stream(path: &Path) -> Result<FeatureStream> {
    require_file(path)?;
    read_stream(path)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<RunManifest> {
    let run = Run::start("synth");
    let config = SynthConfig {
        dim: args.dim,
        spatial_dim: args.spatial_dim,
        length: args.length,
        anomaly_spans: args.spans.clone(),
        anomaly_magnitude: args.magnitude,
        noise_std: args.noise,
        period: args.period,
        harmonics: args.harmonics,
        seed: args.seed.unwrap_or(0),
    };
    let stream = generate_synthetic(&config)?;
    fs::create_dir_all(&args.output)?;
    let path = args.output.join(STREAM_FILE);
    write_stream(&stream, &path)?;
    let meta = crate::feature_io::meta_path(&path);
    run.finish(
        &args.output,
        serde_json::to_value(&config)?,
        Some(config.seed),
        vec![],
        vec![path, meta],
    )
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let run = Run::start("train");
    let file = RunConfig::load_opt(args.training.config.as_deref())?;
    let stream = load_stream(&args.input)?;
    let (mc, tc) = resolve_training(&args.training, &file, stream.dim());
    mc.validate()?;
    tc.validate()?;
    if tc.n_shots > stream.len() {
        return Err(Error::InvalidConfig(format!(
            "--n-shots {} exceeds the stream's {} frames",
            tc.n_shots,
            stream.len()
        )));
    }
    let enabled = !args.no_self_context && file.self_context.unwrap_or(true);
    let artifact = train_few_shot(&stream, &mc, &tc, SelfContext::from_enabled(enabled))?;
    artifact.save(&args.output)?;
    run.finish(
        &args.output,
        json!({ "model": mc, "train": tc, "self_context": enabled }),
        Some(tc.seed),
        vec![args.input.clone()],
        vec![
            args.output.join(crate::trainer::CHECKPOINT_FILE),
            args.output.join(crate::trainer::REPORT_FILE),
        ],
    )
}

pub fn cmd_detect(args: &DetectArgs) -> Result<RunManifest> {
    let run = Run::start("detect");
    let file = RunConfig::load_opt(args.config.as_deref())?;
    let consistency = resolve_consistency(&args.consistency, &file);
    consistency.validate()?;
    let stream = load_stream(&args.input)?;
    let artifact = TrainArtifact::load(&args.model)?;
    let start = args
        .start_index
        .or(file.start_index)
        .unwrap_or(artifact.report.train_config.n_shots + 1);
    let toggle = artifact.report.self_context;
    let verdicts = detect_from(&artifact, &stream, start, &consistency, toggle)?;
    fs::create_dir_all(&args.output)?;
    let path = args.output.join(VERDICTS_FILE);
    write_verdicts(&verdicts, &path)?;
    run.finish(
        &args.output,
        json!({ "consistency": consistency, "start_index": start, "self_context": toggle.is_enabled() }),
        Some(artifact.report.train_config.seed),
        vec![args.input.clone(), args.model.clone()],
        vec![path],
    )
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let run = Run::start("eval");
    let stream = load_stream(&args.input)?;
    require_file(&args.verdicts)?;
    let verdicts = read_verdicts(&args.verdicts)?;
    let artifact = TrainArtifact::load(&args.model)?;
    let labels = verdict_labels(&verdicts, &stream)?;
    let files = emit_curves(&artifact, &verdicts, Some(&labels), &args.output)?;
    let auc = files.auc.ok_or(Error::UndefinedAuc)?;
    let summary = args.output.join(EVAL_FILE);
    fs::write(
        &summary,
        serde_json::to_string_pretty(&json!({ "frames": verdicts.len(), "auc": auc }))?,
    )?;
    let mut outputs = vec![files.scores, files.loss_curve];
    outputs.extend(files.roc);
    outputs.push(summary);
    run.finish(
        &args.output,
        json!({}),
        Some(artifact.report.train_config.seed),
        vec![args.input.clone(), args.model.clone(), args.verdicts.clone()],
        outputs,
    )
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<RunManifest> {
    let run = Run::start("ablate");
    let file = RunConfig::load_opt(args.training.config.as_deref())?;
    let consistency = resolve_consistency(&args.consistency, &file);
    consistency.validate()?;
    let stream = load_stream(&args.input)?;
    let (mc, tc) = resolve_training(&args.training, &file, stream.dim());
    mc.validate()?;
    tc.validate()?;
    let rows = run_ablation(&stream, &AblationSpec::standard(), &mc, &tc, &consistency)?;
    fs::create_dir_all(&args.output)?;
    let (csv, txt) = (args.output.join(ABLATION_CSV), args.output.join(ABLATION_TXT));
    fs::write(&csv, ablation_csv(&rows))?;
    fs::write(&txt, ablation_table(&rows))?;
    run.finish(
        &args.output,
        json!({ "model": mc, "train": tc, "consistency": consistency }),
        Some(tc.seed),
        vec![args.input.clone()],
        vec![csv, txt],
    )
}

pub fn execute(command: &Command) -> Result<RunManifest> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("{THREADS_ENV}: {e}")))
}

fn error_line(status: ExitStatus, message: &str) -> String {
    json!({ "error": status.label(), "code": status.code(), "message": message }).to_string()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitStatus::Success.code();
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", error_line(ExitStatus::Usage, first));
            return ExitStatus::Usage.code();
        }
    };
    match configure_threads().and_then(|()| execute(&cli.command)) {
        Ok(_) => ExitStatus::Success.code(),
        Err(e) => {
            let status = ExitStatus::classify(&e);
            eprintln!("{}", error_line(status, &e.to_string()));
            status.code()
        }
    }
}
