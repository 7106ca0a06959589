//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! malformed input, impossible request), 3 internal invariant violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adaptive::{
    holdout_scores, holdout_split, replay, report_csv, score_features, train_pool, AdaptiveError,
    ReplayConfig, ReplayMode,
};
use crate::classifier::{roc_curve, ClassifierError, GdParams, Model, DEFAULT_ROC_THRESHOLDS};
use crate::corpus::{
    class_diagnostics, corpus_to_string, generate_synthetic, load_corpus, CorpusError, QASession,
    SyntheticConfig,
};
use crate::server::{RunningServer, ServerConfig, ServerError, Service};
use crate::store::StoreError;
use crate::textstats::{CountState, StatsError};

#[derive(Debug, Parser)]
#[command(name = "cqa-detect", version, about = "Detect commercial campaign sessions in Q&A forums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus
    Gen(GenArgs),
    /// Train a model on every labeled session of a corpus
    Train(TrainArgs),
    /// Replay a corpus in time order and report per-batch metrics
    Replay(ReplayArgs),
    /// Score sessions with a saved model
    Score(ScoreArgs),
    /// Per-class distributions of the engagement signals
    Diag(DiagArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
    /// Write plot-ready tables: ROC, adaptive and fixed replay metrics
    ExportReport(ExportArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4998)]
    total: usize,
    /// Number of campaign sessions
    #[arg(long, default_value_t = 2147)]
    campaign: usize,
    #[arg(long, default_value_t = 2000)]
    users: usize,
    #[arg(long, default_value_t = 80)]
    posters: usize,
    /// Output corpus file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GdArgs {
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
}

impl GdArgs {
    fn params(&self) -> Result<GdParams, CliError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CliError::Usage("--learning-rate must be positive".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(CliError::Usage("--tolerance must be non-negative".into()));
        }
        Ok(GdParams {
            learning_rate: self.learning_rate,
            max_iters: self.max_iters,
            tolerance: self.tolerance,
        })
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gd: GdArgs,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Keep the seed model and counts for the whole replay
    #[arg(long)]
    fixed: bool,
    #[arg(long, default_value_t = 200)]
    seed_size: usize,
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    /// Report file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    gd: GdArgs,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled corpus the model was trained on; supplies the counts
    #[arg(long)]
    corpus: PathBuf,
    /// Sessions to score
    #[arg(long)]
    input: PathBuf,
    /// Verdict file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// CDF table file; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Separation verdict file; stderr when omitted
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Training share of the ROC holdout split
    #[arg(long, default_value_t = 3500)]
    train_size: usize,
    /// Shuffle seed of the ROC holdout split
    #[arg(long, default_value_t = 7)]
    split_seed: u64,
    #[command(flatten)]
    gd: GdArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::UnderflowViolation { .. } => CliError::Internal(e.to_string()),
            StatsError::Unlabeled(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Stats(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AdaptiveError> for CliError {
    fn from(e: AdaptiveError) -> Self {
        match e {
            AdaptiveError::Stats(e) => e.into(),
            AdaptiveError::Store(e) => e.into(),
            AdaptiveError::Feature(e) => CliError::Internal(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Store(e) => e.into(),
            ServerError::Adaptive(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Vec<QASession>, CliError> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::Io(io) => io_error(path, io),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Replay(a) => run_replay(a),
        Command::Score(a) => score(a),
        Command::Diag(a) => diag(a),
        Command::Serve(a) => serve(a),
        Command::ExportReport(a) => export_report(a),
    }
}

fn gen(a: GenArgs) -> Result<(), CliError> {
    if a.total == 0 || a.campaign > a.total {
        return Err(CliError::Usage("need 0 < --total and --campaign <= --total".into()));
    }
    let cfg = SyntheticConfig {
        total_sessions: a.total,
        campaign_fraction: a.campaign as f64 / a.total as f64,
        n_users: a.users,
        n_paid_posters: a.posters,
        ..SyntheticConfig::standard(a.seed)
    };
    let corpus = generate_synthetic(&cfg)?;
    emit(a.out.as_deref(), &corpus_to_string(&corpus))
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let params = a.gd.params()?;
    let corpus = load(&a.corpus)?;
    let labeled: Vec<QASession> = corpus.into_iter().filter(|s| s.label.is_some()).collect();
    let state = CountState::rebuild(&labeled);
    let model = train_pool(&labeled, &state, &params, 1)?;
    model.save(&a.out).map_err(|e| match e {
        ClassifierError::Io(io) => io_error(&a.out, io),
        other => other.into(),
    })?;
    log::info!("trained on {} labeled sessions, theta = {:?}", labeled.len(), model.theta);
    Ok(())
}

fn run_replay(a: ReplayArgs) -> Result<(), CliError> {
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be positive".into()));
    }
    let cfg = ReplayConfig {
        seed_size: a.seed_size,
        batch_size: a.batch_size,
        mode: if a.fixed { ReplayMode::Fixed } else { ReplayMode::Adaptive },
        params: a.gd.params()?,
    };
    let corpus = load(&a.corpus)?;
    let reports = replay(&corpus, &cfg)?;
    emit(a.out.as_deref(), &report_csv(&reports))
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let model = Model::load(&a.model).map_err(|e| match e {
        ClassifierError::Io(io) => io_error(&a.model, io),
        other => CliError::Data(format!("{}: {other}", a.model.display())),
    })?;
    let db = load(&a.corpus)?;
    let state = CountState::rebuild(db.iter().filter(|s| s.label.is_some()));
    let input = load(&a.input)?;
    let mut out = String::from("url,score,label,sgqid,sgaid,sgtext\n");
    for s in &input {
        let fv = score_features(s, &state, &model);
        let v = model.classify(&fv);
        writeln!(out, "{},{},{},{},{},{}", csv_field(&s.url), v.score, v.label, fv.sgqid, fv.sgaid, fv.sgtext)
            .unwrap();
    }
    emit(a.out.as_deref(), &out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn diag(a: DiagArgs) -> Result<(), CliError> {
    let corpus = load(&a.corpus)?;
    let diags = class_diagnostics(&corpus)?;
    let mut cdf = String::from("feature,class,value,cdf\n");
    let mut summary = String::from("feature,ks,verdict\n");
    for d in &diags {
        for (class, table) in [("campaign", &d.campaign), ("normal", &d.normal)] {
            for (x, p) in &table.points {
                writeln!(cdf, "{},{class},{x},{p}", d.feature.name()).unwrap();
            }
        }
        writeln!(summary, "{},{},{}", d.feature.name(), d.ks, d.verdict.as_str()).unwrap();
    }
    emit(a.out.as_deref(), &cdf)?;
    match &a.summary {
        Some(path) => std::fs::write(path, summary).map_err(|e| io_error(path, e)),
        None => {
            eprint!("{summary}");
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let cfg = match &a.config {
        Some(path) => ServerConfig::load(path).map_err(|e| CliError::Data(e.to_string()))?,
        None => ServerConfig::default(),
    };
    let svc = Service::open(&cfg)?;
    let server = RunningServer::start(svc, &a.listen)?;
    log::info!("listening on {}", server.addr);
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(tokio::signal::ctrl_c())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    log::info!("shutting down");
    server.stop()?;
    Ok(())
}

fn export_report(a: ExportArgs) -> Result<(), CliError> {
    let params = a.gd.params()?;
    let corpus = load(&a.corpus)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    let write = |name: &str, text: &str| {
        let path = a.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))
    };

    let (train_set, test_set) = holdout_split(&corpus, a.train_size, a.split_seed);
    let held = holdout_scores(&train_set, &test_set, &params)?;
    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in roc_curve(&held.scores, &held.labels, &DEFAULT_ROC_THRESHOLDS)? {
        writeln!(roc, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    write("roc.csv", &roc)?;

    for (name, mode) in [("adaptive.csv", ReplayMode::Adaptive), ("fixed.csv", ReplayMode::Fixed)] {
        let cfg = ReplayConfig {
            mode,
            params,
            ..ReplayConfig::default()
        };
        write(name, &report_csv(&replay(&corpus, &cfg)?))?;
    }
    Ok(())
}
