//! `surgforge`: run curation stages over a corpus, summarize manifests,
//! train the toy contrastive model and score predictions.
//!
//! Exit status: 0 success, 2 configuration, 3 input, 4 backend,
//! 5 invariant violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use surgforge::contrastive::{
    recall_at_1, similarity_matrix, synthetic_split, train_toy, ContrastiveError, SyntheticConfig, ToyEncoders,
    ToyTrainConfig,
};
use surgforge::dataset::{stats_from_jsonl, DatasetError};
use surgforge::eval::{evaluate_records, EvalError, GroundTruthRecord, PredictionRecord};
use surgforge::pipeline::{PipelineConfig, PipelineError, Runner, Stage};

const EXIT_CONFIG: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_INVARIANT: u8 = 5;

#[derive(Parser)]
#[command(name = "surgforge", version, about = "Surgical video-language dataset curation")]
#[command(after_help = "Exit status: 0 ok, 2 config, 3 input, 4 backend, 5 invariant.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More log output (-v info, -vv debug); RUST_LOG takes precedence.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Transcribe or load transcripts; empty ones discard the video.
    Ingest(RunArgs),
    /// Split each transcript into phases, steps and tasks.
    Segment(RunArgs),
    /// Pair every segment with the words it fully contains.
    Align(RunArgs),
    /// Label pairs visually and textually and decide retention.
    Filter(RunArgs),
    /// Rewrite retained captions with preceding context.
    Enrich(RunArgs),
    /// Place each video in the specialty/subject/procedure tree.
    Taxonomy(RunArgs),
    /// All stages in order, then the manifest.
    Pipeline(RunArgs),
    /// Summarize a manifest.
    Stats(StatsArgs),
    /// Train the toy contrastive encoders on synthetic clusters.
    TrainToy(ToyArgs),
    /// Score prediction records against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Ingest,
    Segment,
    Align,
    Filter,
    Enrich,
    Taxonomy,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Ingest => Stage::Ingest,
            StageArg::Segment => Stage::Segment,
            StageArg::Align => Stage::Align,
            StageArg::Filter => Stage::Filter,
            StageArg::Enrich => Stage::Enrich,
            StageArg::Taxonomy => Stage::Taxonomy,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file, one JSON object per video.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Work directory holding artifacts, checkpoints and the manifest.
    #[arg(long)]
    work: Option<PathBuf>,
    /// Route every backend to the built-in deterministic mock.
    #[arg(long)]
    mock: bool,
    /// Seed recorded with the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Videos processed concurrently.
    #[arg(long)]
    workers: Option<usize>,
    /// One task per sentence and no phase or step pairs.
    #[arg(long)]
    no_mlsc: bool,
    /// Keep every pair (no visual or textual filtering).
    #[arg(long)]
    no_dmf: bool,
    /// Skip the frame-based visual filter.
    #[arg(long)]
    no_visual_filter: bool,
    /// Skip the caption judge.
    #[arg(long)]
    no_textual_filter: bool,
    /// Keep raw captions only.
    #[arg(long)]
    no_ce: bool,
    /// Frames sampled per task clip.
    #[arg(long)]
    n_frames: Option<usize>,
    /// Surgical frame fraction a clip must exceed.
    #[arg(long)]
    vote_threshold: Option<f64>,
    /// Preceding captions given to enrichment.
    #[arg(long)]
    context_window: Option<usize>,
    /// Recompute this stage and everything depending on it.
    #[arg(long, value_enum)]
    restart_from: Option<StageArg>,
}

#[derive(Args)]
struct StatsArgs {
    /// Manifest file.
    #[arg(long, conflicts_with = "work")]
    manifest: Option<PathBuf>,
    /// Work directory whose manifest to read.
    #[arg(long)]
    work: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 8)]
    per_cluster: usize,
    #[arg(long, default_value_t = 4)]
    latent_dim: usize,
    #[arg(long, default_value_t = 16)]
    input_dim: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Keep the temperature at its initial value.
    #[arg(long)]
    fixed_temperature: bool,
    /// Write the per-step loss and temperature as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction records (JSON lines).
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth records (JSON lines).
    #[arg(long)]
    ground_truth: PathBuf,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(e.exit_code() as u8, e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let code = match e {
            DatasetError::Io { .. }
            | DatasetError::Parse { .. }
            | DatasetError::InvalidRecord { .. }
            | DatasetError::EmptyManifest => EXIT_INPUT,
            _ => EXIT_INVARIANT,
        };
        Failure::new(code, e)
    }
}

impl From<ContrastiveError> for Failure {
    fn from(e: ContrastiveError) -> Self {
        let code = match e {
            ContrastiveError::InvalidConfig(_)
            | ContrastiveError::InsufficientPairs { .. }
            | ContrastiveError::DimensionMismatch(_)
            | ContrastiveError::InvalidTemperature(_) => EXIT_CONFIG,
            _ => EXIT_INVARIANT,
        };
        Failure::new(code, e)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Divergence { .. } | EvalError::NonFinite(_) => EXIT_INVARIANT,
            _ => EXIT_INPUT,
        };
        Failure::new(code, e)
    }
}

fn input_failure(e: anyhow::Error) -> Failure {
    Failure::new(EXIT_INPUT, e)
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_process_env()?;
    if args.corpus.is_some() {
        cfg.paths.corpus = args.corpus.clone();
    }
    if args.work.is_some() {
        cfg.paths.work_dir = args.work.clone();
    }
    cfg.mock |= args.mock;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    let st = &mut cfg.stages;
    st.mlsc &= !args.no_mlsc;
    st.dmf &= !args.no_dmf;
    st.visual_filter &= !args.no_visual_filter;
    st.textual_filter &= !args.no_textual_filter;
    st.ce &= !args.no_ce;
    if let Some(n) = args.n_frames {
        cfg.filtering.n_frames = n;
    }
    if let Some(t) = args.vote_threshold {
        cfg.filtering.vote_threshold = t;
    }
    if let Some(n) = args.context_window {
        cfg.enrichment.context_window = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let runner = Runner::new(cfg)?;
    if let Some(stage) = args.restart_from {
        runner.restart_from(stage.into())?;
    }
    let report = runner.run(stages)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.manifest_records.is_some() {
        log::info!("manifest written to {}", runner.manifest_path().display());
    }
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<(), Failure> {
    let path = match (&args.manifest, &args.work) {
        (Some(m), _) => m.clone(),
        (None, Some(w)) => w.join("manifest.jsonl"),
        (None, None) => {
            return Err(Failure::new(EXIT_CONFIG, anyhow!("pass --manifest or --work")));
        }
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_failure)?;
    let report = stats_from_jsonl(&text)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

fn train(args: &ToyArgs) -> Result<(), Failure> {
    let data_cfg = SyntheticConfig {
        clusters: args.clusters,
        per_cluster: args.per_cluster,
        latent_dim: args.latent_dim,
        input_dim: args.input_dim,
        noise: args.noise,
        seed: args.seed,
    };
    let (train, held) = synthetic_split(&data_cfg)?;
    let encoders = ToyEncoders::random(args.input_dim, args.embed_dim, args.seed);
    let cfg = ToyTrainConfig {
        steps: args.steps,
        lr: args.lr,
        learn_temperature: !args.fixed_temperature,
    };
    let run = train_toy(&train, encoders, &cfg)?;
    let sim = similarity_matrix(
        &run.encoders.encode_video(&held.video),
        &run.encoders.encode_text(&held.text),
    )?;
    if let Some(path) = &args.trace {
        let mut text = String::new();
        for p in &run.trace {
            text.push_str(&serde_json::to_string(p).expect("trace serializes"));
            text.push('\n');
        }
        write_file(path, &text)?;
    }
    let last = run.trace.last();
    let summary = json!({
        "seed": args.seed,
        "steps": run.trace.len(),
        "initial_loss": run.trace.first().map(|p| p.loss),
        "final_loss": last.map(|p| p.loss),
        "tau": run.encoders.temperature.tau(),
        "held_out_pairs": held.len(),
        "recall_at_1_video_to_text": recall_at_1(&sim),
        "recall_at_1_text_to_video": recall_at_1(&sim.transpose()),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input_failure)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .map_err(input_failure)
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(input_failure)
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let preds: Vec<PredictionRecord> = read_jsonl(&args.predictions)?;
    let gts: Vec<GroundTruthRecord> = read_jsonl(&args.ground_truth)?;
    let report = evaluate_records(&preds, &gts)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Ingest(a) => run_stages(a, &[Stage::Ingest]),
        Command::Segment(a) => run_stages(a, &[Stage::Segment]),
        Command::Align(a) => run_stages(a, &[Stage::Align]),
        Command::Filter(a) => run_stages(a, &[Stage::Filter]),
        Command::Enrich(a) => run_stages(a, &[Stage::Enrich]),
        Command::Taxonomy(a) => run_stages(a, &[Stage::Taxonomy]),
        Command::Pipeline(a) => run_stages(a, &Stage::ALL),
        Command::Stats(a) => stats(a),
        Command::TrainToy(a) => train(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
