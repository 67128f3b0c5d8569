//! `bdrisk`: synthesize corpora, build timelines, train and evaluate the
//! forecaster, run ablations and period sweeps, and emit analysis tables.

mod config;
mod output;
mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use bdrisk_core::analysis::{
    aggregate_attention, cohens_kappa, group_compare, kaplan_meier, krippendorff_alpha, write_group_csv,
    write_survival_csv, AnalysisError, Lexicon, LexiconFeatures, PastSuicidality, SymptomFrequency, TimelineFeatures,
};
use bdrisk_core::corpus::{generate_synthetic_corpus, parse_corpus, parse_timestamp, Corpus, CorpusError, SynthSpec};
use bdrisk_core::encoder::{encode_timelines, EncodeError};
use bdrisk_core::model::checkpoint::Checkpoint;
use bdrisk_core::model::ModelError;
use bdrisk_core::timeline::{build_timelines, split_user_disjoint_folds, write_timelines_jsonl, Scheme, Timeline, TimelineError};
use bdrisk_core::trainer::{
    evaluate, run_fold, run_ablation, summarize, sweep_cell, write_metrics_csv, EncodedSet, ExperimentConfig,
    MetricsRow, TrainError, Variant,
};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use output::{embed_corpus, sibling, write_atomic, write_json, EncoderSpec, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
    Io(std::io::Error),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Data(m) => ("data", m.clone()),
            CliError::Diverged(m) => ("divergence", m.clone()),
            CliError::Io(e) => ("io", e.to_string()),
        };
        let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
        json!({"error": kind, "exit_code": self.code(), "message": message}).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(CorpusError, TimelineError, EncodeError, ModelError, AnalysisError, csv::Error);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

const EXIT_CODES: &str = "Exit codes: 0 success, 2 usage error, 3 data validation error, 4 training divergence. \
Failures print one JSON line on stderr. Set BDRISK_CACHE_DIR to persist post embeddings.";

#[derive(Parser)]
#[command(name = "bdrisk", version, about = "Forecast future suicidality from annotated post timelines", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus (JSON lines)
    Synth(SynthArgs),
    /// Build sliding-window timelines from a corpus
    Timelines(TimelinesArgs),
    /// Cross-validate the forecaster; writes metrics, histories and fold checkpoints
    Train(TrainArgs),
    /// Evaluate a checkpoint on every timeline of a corpus
    Eval(EvalArgs),
    /// Cross-validate ablated model variants
    Ablate(AblateArgs),
    /// Cross-validate over a grid of observation and forecast periods
    Sweep(SweepArgs),
    /// Kaplan-Meier curves of continued activity per diagnosis group
    Survival(SurvivalArgs),
    /// Group t-tests over timeline features and annotator agreement
    Stats(StatsArgs),
    /// Mean attention per symptom and future risk level
    Attention(AttentionArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; omitted keys take their defaults
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WindowArgs {
    /// Observation period in 30-day months
    #[arg(long = "l", default_value_t = 6)]
    l: u32,
    /// Forecast period in 30-day months
    #[arg(long = "m", default_value_t = 1)]
    m: u32,
    /// Minimum posts in the observation window
    #[arg(long, default_value_t = 3)]
    min_posts: usize,
}

#[derive(Args)]
struct TimelinesArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write the user-disjoint fold assignment (CSV)
    #[arg(long)]
    folds_out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    /// Total decay of gamma over max epochs
    SpreadOverRun,
    /// Multiply the rate by gamma after every epoch
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    FoldMean,
    Pooled,
}

#[derive(Args)]
#[command(next_help_heading = "Hyperparameters")]
struct HyperArgs {
    /// Flat JSON config; flags given on the command line override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel folds or cells [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Initial learning rate
    #[arg(long, default_value = "1e-5")]
    lr: f64,
    #[arg(long, default_value = "0.01")]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Maximum training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Early-stopping patience in epochs
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Exponential learning-rate decay factor
    #[arg(long, default_value = "0.001")]
    lr_gamma: f64,
    #[arg(long, value_enum, default_value = "spread-over-run")]
    schedule: ScheduleArg,
    /// Hidden state size H
    #[arg(long, default_value_t = 512)]
    hidden_size: usize,
    /// Stacked BiLSTM layers n
    #[arg(long, default_value_t = 2)]
    lstm_layers: usize,
    #[arg(long, default_value = "0.1")]
    dropout: f64,
    /// Ordinal soft-label sharpness
    #[arg(long, default_value = "1.8")]
    alpha: f64,
    /// Post embedding width
    #[arg(long, default_value_t = 1024)]
    embedding_dim: usize,
    /// Most recent posts kept per timeline
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Risk levels: 4, 3 or 2
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..=4))]
    scheme: u32,
    #[arg(long, default_value_t = 3)]
    min_posts: usize,
    #[arg(long, value_enum, default_value = "fold-mean")]
    aggregation: AggregationArg,
    /// Seed of the hash-projection encoder
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
    /// Embedding command reading text on stdin and printing a JSON array; needs --embedding-dim
    #[arg(long)]
    embed_cmd: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Observation period in 30-day months
    #[arg(long = "l", default_value_t = 6)]
    l: u32,
    /// Forecast period in 30-day months
    #[arg(long = "m", default_value_t = 1)]
    m: u32,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Risk levels; must match the checkpoint [default: the checkpoint's]
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..=4))]
    scheme: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Variant name, or "all" for every row
    #[arg(long, default_value = "all")]
    variant: String,
    #[arg(long = "l", default_value_t = 6)]
    l: u32,
    #[arg(long = "m", default_value_t = 1)]
    m: u32,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Observation periods in months
    #[arg(long = "l", value_delimiter = ',', default_value = "1,3,6,12")]
    l: Vec<u32>,
    /// Forecast periods in months
    #[arg(long = "m", value_delimiter = ',', default_value = "1,3,6,12")]
    m: Vec<u32>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SurvivalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Inactivity longer than this many days ends a user's activity
    #[arg(long, default_value_t = 180.0)]
    window_days: f64,
    /// Censoring date [default: the last timestamp in the corpus]
    #[arg(long)]
    study_end: Option<String>,
    /// Curve table (CSV); the JSON curves go next to it
    #[arg(long)]
    out: PathBuf,
    /// Also render an SVG plot
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON lexicon: category -> words, `*` marks a prefix
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Annotations CSV with columns unit,rater,label
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    /// Group comparison table (CSV); agreement goes next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Profile (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Also write the profile as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also render an SVG heatmap
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code()
        }
    };
    std::process::exit(code);
}

fn run() -> Result<(), CliError> {
    use clap::error::ErrorKind;
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand required");
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Timelines(a) => cmd_timelines(a),
        Command::Train(a) => cmd_train(a, sub),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a, sub),
        Command::Sweep(a) => cmd_sweep(a, sub),
        Command::Survival(a) => cmd_survival(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Attention(a) => cmd_attention(a),
    }
}

fn load_corpus(path: &Path) -> Result<(Corpus, String), CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("corpus file not found: {}", path.display())));
    }
    let (corpus, _) = parse_corpus(path)?;
    Ok((corpus, output::sha256_file(path)?))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("checkpoint not found: {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    if jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e)))
}

/// Defaults, then the config file, then flags given on the command line.
fn resolve(h: &HyperArgs, m: &ArgMatches, extra: Vec<(&'static str, &'static str, Value)>) -> Result<ExperimentConfig, CliError> {
    let mut flat = match &h.config {
        Some(p) => config::load_flat(p)?,
        None => Map::new(),
    };
    let schedule = match h.schedule {
        ScheduleArg::SpreadOverRun => "spread_over_run",
        ScheduleArg::Literal => "literal",
    };
    let aggregation = match h.aggregation {
        AggregationArg::FoldMean => "fold_mean",
        AggregationArg::Pooled => "pooled",
    };
    let mut pairs = vec![
        ("folds", "folds", json!(h.folds)),
        ("seed", "seed", json!(h.seed)),
        ("lr", "learning_rate", json!(h.lr)),
        ("weight_decay", "weight_decay", json!(h.weight_decay)),
        ("batch_size", "batch_size", json!(h.batch_size)),
        ("epochs", "max_epochs", json!(h.epochs)),
        ("patience", "patience", json!(h.patience)),
        ("lr_gamma", "lr_gamma", json!(h.lr_gamma)),
        ("schedule", "schedule", json!(schedule)),
        ("hidden_size", "hidden_size", json!(h.hidden_size)),
        ("lstm_layers", "lstm_layers", json!(h.lstm_layers)),
        ("dropout", "dropout", json!(h.dropout)),
        ("alpha", "alpha", json!(h.alpha)),
        ("embedding_dim", "embedding_dim", json!(h.embedding_dim)),
        ("max_len", "max_len", json!(h.max_len)),
        ("scheme", "n_levels", json!(h.scheme)),
        ("min_posts", "min_posts", json!(h.min_posts)),
        ("aggregation", "aggregation", json!(aggregation)),
    ];
    pairs.extend(extra);
    for (id, key, value) in pairs {
        if m.value_source(id) == Some(ValueSource::CommandLine) {
            flat.insert(key.into(), value);
        }
    }
    let cfg = config::apply_flat(&ExperimentConfig::default(), &flat)?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    if cfg.max_len == 0 || cfg.min_posts == 0 {
        return Err(CliError::Data("max_len and min_posts must be at least 1".into()));
    }
    if h.embed_cmd.is_some() && m.value_source("embedding_dim") != Some(ValueSource::CommandLine) {
        return Err(CliError::Usage("--embed-cmd requires an explicit --embedding-dim".into()));
    }
    Ok(cfg)
}

fn encoder_spec(h: &HyperArgs, cfg: &ExperimentConfig) -> EncoderSpec {
    match &h.embed_cmd {
        Some(command) => EncoderSpec::Command { command: command.clone(), dimension: cfg.model.embedding_dim },
        None => EncoderSpec::Hash { dimension: cfg.model.embedding_dim, seed: h.encoder_seed },
    }
}

fn timelines_or_fail(corpus: &Corpus, l: u32, m: u32, min_posts: usize) -> Result<Vec<Timeline>, CliError> {
    let ts = build_timelines(corpus, l, m, min_posts);
    if ts.is_empty() {
        return Err(CliError::Data(format!("no timelines for l={l}, m={m}, min_posts={min_posts}")));
    }
    Ok(ts)
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("synth");
    let spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    let corpus = generate_synthetic_corpus(&spec, a.seed)?;
    write_atomic(&a.out, |w| Ok(w.write_all(corpus.to_jsonl().as_bytes())?))?;
    manifest.config = serde_json::to_value(&spec).expect("spec serializes");
    manifest.seeds.insert("seed".into(), a.seed);
    manifest.corpus_sha256 = Some(output::sha256_file(&a.out)?);
    manifest.output(&a.out);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

fn cmd_timelines(a: TimelinesArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("timelines");
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let w = &a.window;
    let ts = build_timelines(&corpus, w.l, w.m, w.min_posts);
    write_atomic(&a.out, |out| Ok(write_timelines_jsonl(&ts, out)?))?;
    manifest.output(&a.out);
    if let Some(path) = &a.folds_out {
        let split = split_user_disjoint_folds(&ts, a.folds, a.seed)?;
        write_atomic(path, |out| Ok(split.write_csv(out)?))?;
        manifest.output(path);
        manifest.seeds.insert("fold_seed".into(), a.seed);
    }
    manifest.config = json!({"l_months": w.l, "m_months": w.m, "min_posts": w.min_posts, "folds": a.folds});
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

#[derive(Serialize)]
struct HistoryRow {
    fold: usize,
    epoch: usize,
    loss: f64,
    loss_fs: f64,
    loss_bd: f64,
    val_f1: f64,
    train_f1: Option<f64>,
    learning_rate: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn cmd_train(a: TrainArgs, m: &ArgMatches) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("train");
    let cfg = resolve(&a.hyper, m, vec![("l", "l_months", json!(a.l)), ("m", "m_months", json!(a.m))])?;
    let pool = thread_pool(a.hyper.jobs)?;
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let ts = timelines_or_fail(&corpus, cfg.l_months, cfg.m_months, cfg.min_posts)?;
    let split = split_user_disjoint_folds(&ts, cfg.folds, cfg.train.seed)?;
    let encoder = encoder_spec(&a.hyper, &cfg);
    let embeddings = embed_corpus(&encoder, &corpus, &hash)?;
    let data = EncodedSet::new(&embeddings, &ts, cfg.max_len)?;
    let results = pool.install(|| {
        (0..split.k)
            .into_par_iter()
            .map(|f| run_fold(&data, &split, f, &cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = summarize(&results, cfg.model.scheme(), cfg.aggregation)?;

    std::fs::create_dir_all(&a.out)?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut history = Vec::new();
    for r in &results {
        rows.extend(r.evaluation.rows(&format!("fold{}", r.fold)));
        history.extend(r.history.iter().map(|h| HistoryRow {
            fold: r.fold,
            epoch: h.epoch,
            loss: h.loss,
            loss_fs: h.loss_fs,
            loss_bd: h.loss_bd,
            val_f1: h.val_f1,
            train_f1: h.train_f1,
            learning_rate: h.learning_rate,
        }));
        let mut ck = Checkpoint::new(r.model.clone(), cfg.train.seed);
        encoder.to_metadata(&mut ck.metadata);
        for (k, v) in [
            ("fold", r.fold.to_string()),
            ("best_epoch", r.best_epoch.to_string()),
            ("l_months", cfg.l_months.to_string()),
            ("m_months", cfg.m_months.to_string()),
            ("min_posts", cfg.min_posts.to_string()),
            ("max_len", cfg.max_len.to_string()),
            ("corpus_sha256", hash.clone()),
        ] {
            ck.metadata.insert(k.into(), v);
        }
        let path = a.out.join(format!("fold{}.ckpt", r.fold));
        write_atomic(&path, |w| Ok(ck.write_to(w)?))?;
        manifest.output(&path);
    }
    rows.extend(summary.rows("cv"));

    let metrics = a.out.join("metrics.csv");
    write_atomic(&metrics, |w| Ok(write_metrics_csv(&rows, w)?))?;
    let hist = a.out.join("history.csv");
    write_rows(&hist, &history)?;
    let folds = a.out.join("folds.csv");
    write_atomic(&folds, |w| Ok(split.write_csv(w)?))?;
    let summary_path = a.out.join("summary.json");
    write_json(&summary_path, &summary)?;
    let config_path = a.out.join("config.json");
    write_json(&config_path, &config::flatten(&cfg))?;
    for p in [&metrics, &hist, &folds, &summary_path, &config_path] {
        manifest.output(p);
    }
    manifest.config = Value::Object(config::flatten(&cfg));
    manifest.seeds.insert("seed".into(), cfg.train.seed);
    if let EncoderSpec::Hash { seed, .. } = encoder {
        manifest.seeds.insert("encoder_seed".into(), seed);
    }
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&a.out.join("manifest.json"))
}

fn meta_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T, CliError> {
    ck.metadata
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Data(format!("checkpoint metadata lacks a valid {key:?}")))
}

/// Rebuilds the encoded timelines a checkpoint was trained on.
fn checkpoint_inputs(ck: &Checkpoint, corpus: &Corpus, hash: &str) -> Result<Vec<bdrisk_core::encoder::EncodedSequence>, CliError> {
    let encoder = EncoderSpec::from_metadata(&ck.metadata)?;
    let ts = timelines_or_fail(corpus, meta_num(ck, "l_months")?, meta_num(ck, "m_months")?, meta_num(ck, "min_posts")?)?;
    let embeddings = embed_corpus(&encoder, corpus, hash)?;
    Ok(encode_timelines(&embeddings, &ts, meta_num(ck, "max_len")?)?)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("eval");
    let ck = load_checkpoint(&a.checkpoint)?;
    let scheme = match a.scheme {
        Some(n) => Scheme::from_levels(n as usize)?,
        None => ck.model.config.scheme(),
    };
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let seqs = checkpoint_inputs(&ck, &corpus, &hash)?;
    let evaluation = evaluate(&ck.model, &seqs, scheme)?;
    let run_id = a.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    write_atomic(&a.out, |w| Ok(write_metrics_csv(&evaluation.rows(&run_id), w)?))?;
    manifest.output(&a.out);
    manifest.config = json!({"checkpoint": a.checkpoint, "scheme": scheme.n_levels(), "metadata": ck.metadata});
    manifest.seeds.insert("seed".into(), ck.seed);
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

fn cmd_ablate(a: AblateArgs, m: &ArgMatches) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("ablate");
    let variants: Vec<Variant> = if a.variant.eq_ignore_ascii_case("all") {
        Variant::ALL.to_vec()
    } else {
        vec![Variant::parse(&a.variant).map_err(|e| CliError::Usage(e.to_string()))?]
    };
    let cfg = resolve(&a.hyper, m, vec![("l", "l_months", json!(a.l)), ("m", "m_months", json!(a.m))])?;
    let pool = thread_pool(a.hyper.jobs)?;
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let ts = timelines_or_fail(&corpus, cfg.l_months, cfg.m_months, cfg.min_posts)?;
    let encoder = encoder_spec(&a.hyper, &cfg);
    let embeddings = embed_corpus(&encoder, &corpus, &hash)?;
    let summaries = pool.install(|| {
        variants
            .par_iter()
            .map(|v| run_ablation(*v, &ts, &embeddings, &cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<MetricsRow> = variants.iter().zip(&summaries).flat_map(|(v, s)| s.rows(v.name())).collect();
    write_atomic(&a.out, |w| Ok(write_metrics_csv(&rows, w)?))?;
    manifest.output(&a.out);
    manifest.config = json!({
        "variants": variants.iter().map(|v| v.name()).collect::<Vec<_>>(),
        "experiment": config::flatten(&cfg),
    });
    manifest.seeds.insert("seed".into(), cfg.train.seed);
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

#[derive(Serialize)]
struct SweepRow {
    l_months: u32,
    m_months: u32,
    n_timelines: usize,
    scheme: usize,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    symptom_f1: Option<f64>,
    note: Option<String>,
}

fn cmd_sweep(a: SweepArgs, m: &ArgMatches) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("sweep");
    if a.l.is_empty() || a.m.is_empty() || a.l.contains(&0) || a.m.contains(&0) {
        return Err(CliError::Usage("--l and --m need positive month counts".into()));
    }
    let cfg = resolve(&a.hyper, m, vec![])?;
    let pool = thread_pool(a.hyper.jobs)?;
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let encoder = encoder_spec(&a.hyper, &cfg);
    let embeddings = embed_corpus(&encoder, &corpus, &hash)?;
    let grid: Vec<(u32, u32)> = a.l.iter().flat_map(|l| a.m.iter().map(move |m| (*l, *m))).collect();
    let cells = pool.install(|| {
        grid.par_iter()
            .map(|(l, m)| sweep_cell(&corpus, *l, *m, &embeddings, &cfg))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<SweepRow> = cells
        .iter()
        .map(|c| SweepRow {
            l_months: c.l_months,
            m_months: c.m_months,
            n_timelines: c.n_timelines,
            scheme: cfg.model.n_levels,
            precision: c.summary.as_ref().map(|s| s.suicidality.precision),
            recall: c.summary.as_ref().map(|s| s.suicidality.recall),
            f1: c.summary.as_ref().map(|s| s.suicidality.f1),
            symptom_f1: c.summary.as_ref().map(|s| s.symptom.f1),
            note: c.note.clone(),
        })
        .collect();
    write_rows(&a.out, &rows)?;
    manifest.output(&a.out);
    manifest.config = json!({"l": a.l, "m": a.m, "experiment": config::flatten(&cfg)});
    manifest.seeds.insert("seed".into(), cfg.train.seed);
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

fn cmd_survival(a: SurvivalArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("survival");
    if !(a.window_days > 0.0 && a.window_days.is_finite()) {
        return Err(CliError::Usage("--window-days must be positive".into()));
    }
    let study_end = match &a.study_end {
        Some(s) => Some(parse_timestamp(s).ok_or_else(|| CliError::Usage(format!("bad --study-end {s:?}")))?),
        None => None,
    };
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let curves = kaplan_meier(&corpus.users, a.window_days, study_end);
    write_atomic(&a.out, |w| Ok(write_survival_csv(&curves, w)?))?;
    let json_path = sibling(&a.out, "json");
    write_json(&json_path, &curves)?;
    manifest.output(&a.out);
    manifest.output(&json_path);
    if let Some(p) = &a.plot {
        let svg = plot::survival_svg(&curves);
        write_atomic(p, |w| Ok(w.write_all(svg.as_bytes())?))?;
        manifest.output(p);
    }
    manifest.config = json!({"window_days": a.window_days, "study_end": a.study_end});
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

#[derive(Serialize)]
struct AgreementRow {
    statistic: &'static str,
    raters: String,
    n_units: usize,
    value: Option<f64>,
    note: Option<String>,
}

/// Reads `unit,rater,label` rows into a unit-by-rater matrix.
fn read_ratings(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<String>>>), CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("ratings file not found: {}", path.display())));
    }
    #[derive(serde::Deserialize)]
    struct Rating {
        unit: String,
        rater: String,
        label: String,
    }
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut raters = BTreeSet::new();
    let mut units = BTreeSet::new();
    for (i, rec) in csv::Reader::from_path(path)?.deserialize::<Rating>().enumerate() {
        let r = rec?;
        raters.insert(r.rater.clone());
        units.insert(r.unit.clone());
        if cells.insert((r.unit.clone(), r.rater.clone()), r.label).is_some() {
            return Err(CliError::Data(format!("row {}: duplicate rating of unit {:?} by {:?}", i + 2, r.unit, r.rater)));
        }
    }
    let raters: Vec<String> = raters.into_iter().collect();
    let matrix = units
        .iter()
        .map(|u| raters.iter().map(|r| cells.get(&(u.clone(), r.clone())).cloned()).collect())
        .collect();
    Ok((raters, matrix))
}

fn agreement_rows(raters: &[String], matrix: &[Vec<Option<String>>]) -> Vec<AgreementRow> {
    let mut rows = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let (a, b): (Vec<&String>, Vec<&String>) = matrix
                .iter()
                .filter_map(|u| Some((u[i].as_ref()?, u[j].as_ref()?)))
                .unzip();
            let (value, note) = match cohens_kappa(&a, &b) {
                Ok(k) => (Some(k), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(AgreementRow {
                statistic: "cohens_kappa",
                raters: format!("{}|{}", raters[i], raters[j]),
                n_units: a.len(),
                value,
                note,
            });
        }
    }
    let (value, note) = match krippendorff_alpha(matrix) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    rows.push(AgreementRow {
        statistic: "krippendorff_alpha",
        raters: raters.join("|"),
        n_units: matrix.len(),
        value,
        note,
    });
    rows
}

fn cmd_stats(a: StatsArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("stats");
    let lexicon = match &a.lexicon {
        Some(p) => Some(Lexicon::load(p)?),
        None => None,
    };
    let ratings = a.ratings.as_deref().map(read_ratings).transpose()?;
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let w = &a.window;
    let ts = timelines_or_fail(&corpus, w.l, w.m, w.min_posts)?;
    let lex_features = lexicon.as_ref().map(LexiconFeatures);
    let mut extractors: Vec<&dyn TimelineFeatures> = vec![&SymptomFrequency, &PastSuicidality];
    if let Some(f) = &lex_features {
        extractors.push(f);
    }
    let table = group_compare(&ts, &extractors)?;
    write_atomic(&a.out, |out| Ok(write_group_csv(&table, out)?))?;
    manifest.output(&a.out);
    if let Some((raters, matrix)) = &ratings {
        let path = sibling(&a.out, "agreement.csv");
        write_rows(&path, &agreement_rows(raters, matrix))?;
        manifest.output(&path);
    }
    manifest.config = json!({
        "l_months": w.l, "m_months": w.m, "min_posts": w.min_posts,
        "lexicon": a.lexicon, "ratings": a.ratings,
    });
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

#[derive(Serialize)]
struct AttentionRow<'a> {
    symptom: &'a str,
    level: &'a str,
    mean: Option<f64>,
    count: usize,
}

fn cmd_attention(a: AttentionArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("attention");
    let ck = load_checkpoint(&a.checkpoint)?;
    let (corpus, hash) = load_corpus(&a.corpus)?;
    let seqs = checkpoint_inputs(&ck, &corpus, &hash)?;
    let profile = aggregate_attention(&ck.model, &seqs)?;
    write_json(&a.out, &profile)?;
    manifest.output(&a.out);
    if let Some(p) = &a.csv {
        let mut rows = Vec::new();
        for (i, s) in profile.symptoms.iter().enumerate() {
            for (j, l) in profile.levels.iter().enumerate() {
                rows.push(AttentionRow { symptom: s, level: l, mean: profile.mean[i][j], count: profile.counts[i][j] });
            }
        }
        write_rows(p, &rows)?;
        manifest.output(p);
    }
    if let Some(p) = &a.plot {
        let svg = plot::attention_svg(&profile);
        write_atomic(p, |w| Ok(w.write_all(svg.as_bytes())?))?;
        manifest.output(p);
    }
    manifest.config = json!({"checkpoint": a.checkpoint, "metadata": ck.metadata});
    manifest.seeds.insert("seed".into(), ck.seed);
    manifest.corpus_sha256 = Some(hash);
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper_of(args: &[&str]) -> (HyperArgs, ArgMatches) {
        let m = Cli::command().try_get_matches_from(args).unwrap();
        let sub = m.subcommand().unwrap().1.clone();
        match Cli::from_arg_matches(&m).unwrap().command {
            Command::Train(t) => (t.hyper, sub),
            _ => unreachable!(),
        }
    }

    #[test]
    fn help_defaults_match_library_defaults() {
        let (h, _) = hyper_of(&["bdrisk", "train", "--corpus", "c", "--out", "o"]);
        let d = ExperimentConfig::default();
        assert_eq!(h.lr, d.train.learning_rate);
        assert_eq!(h.weight_decay, d.train.weight_decay);
        assert_eq!(h.batch_size, d.train.batch_size);
        assert_eq!(h.epochs, d.train.max_epochs);
        assert_eq!(h.patience, d.train.patience);
        assert_eq!(h.lr_gamma, d.train.lr_gamma);
        assert_eq!(h.seed, d.train.seed);
        assert_eq!(h.hidden_size, d.model.hidden_size);
        assert_eq!(h.lstm_layers, d.model.lstm_layers);
        assert_eq!(h.dropout, d.model.dropout);
        assert_eq!(h.alpha, d.model.alpha);
        assert_eq!(h.embedding_dim, d.model.embedding_dim);
        assert_eq!(h.scheme as usize, d.model.n_levels);
        assert_eq!(h.max_len, d.max_len);
        assert_eq!(h.min_posts, d.min_posts);
        assert_eq!(h.folds, d.folds);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"hidden_size": 8, "learning_rate": 0.5, "patience": 3}"#).unwrap();
        let p = path.to_str().unwrap();
        let (h, m) = hyper_of(&["bdrisk", "train", "--corpus", "c", "--out", "o", "--config", p, "--lr", "0.25"]);
        let cfg = resolve(&h, &m, vec![]).unwrap();
        assert_eq!(cfg.model.hidden_size, 8);
        assert_eq!(cfg.train.learning_rate, 0.25);
        assert_eq!(cfg.train.patience, 3);
        assert_eq!(cfg.model.alpha, 1.8);
    }

    #[test]
    fn errors_are_single_json_lines() {
        let e = CliError::Usage("bad\nflag\n  here".into());
        let line = e.to_json();
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["message"], "bad flag here");
    }
}
