mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgeprof_core::analysis::{FitMethod, MatchOn};
use edgeprof_core::BackendMode;

use config::Kind;

/// Profile CPU-only LLM/VLM inference: sweep inputs, integrate resource use
/// above idle, fit scaling curves and emit tables and figures.
#[derive(Debug, Parser)]
#[command(name = "edgeprof", version, arg_required_else_help = true)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, env = "EDGEPROF_CONFIG")]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build and print a cumulative prompt ladder.
    Ladder(LadderArgs),
    /// Run a prompt or resolution sweep against a backend while sampling.
    Sweep(Box<SweepArgs>),
    /// Detect windows and integrate AUC for a run directory or a bare trace file.
    Analyze(AnalyzeArgs),
    /// Fit y = a x + b to a two-column CSV.
    Fit(FitArgs),
    /// Locate the flat-then-drop knee in (pixels, cost) CSV data.
    Knee(KneeArgs),
    /// Compare a compressed run against its base model on shared inputs.
    Compare(CompareArgs),
    /// Emit tables, fits and figures for one or more runs.
    Report(ReportArgs),
    /// Score run outputs against reference answers.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
struct LadderArgs {
    /// Text file whose blank-line separated blocks are the segments.
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Number of generated filler segments when no file is given.
    #[arg(long, default_value_t = 19)]
    steps: usize,
    #[arg(long, default_value_t = 40)]
    words: usize,
    /// Print the full ladder as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Persistent,
    Stateless,
}

impl From<BackendArg> for BackendMode {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendMode::Mock,
            BackendArg::Persistent => BackendMode::PersistentSession,
            BackendArg::Stateless => BackendMode::StatelessCli,
        }
    }
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Number of sweep steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Prompt segments file (ladder sweeps).
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Words per generated filler segment (ladder sweeps without a file).
    #[arg(long)]
    words: Option<usize>,
    /// Source image (resolution sweeps). A synthetic one is generated if absent.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Size of the synthetic source image, e.g. 2048x1440.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    min_width: Option<u32>,
    /// Clamp in effect, e.g. 1024x720.
    #[arg(long)]
    clamp: Option<String>,
    #[arg(long)]
    prompt_template: Option<PathBuf>,
    /// Model file passed to the backend as {model}.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Backend command line, whitespace separated (use the config file for quoting).
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    load_ms: Option<f64>,
    #[arg(long)]
    per_token_ms: Option<f64>,
    #[arg(long)]
    per_pixel_ns: Option<f64>,
    #[arg(long)]
    output_tokens: Option<u64>,
    #[arg(long)]
    rate_hz: Option<f64>,
    /// system, self or pid:<n>.
    #[arg(long)]
    scope: Option<String>,
    /// Power-meter log to read alongside the CPU trace.
    #[arg(long)]
    energy_source: Option<PathBuf>,
    #[arg(long)]
    device: Option<String>,
    /// Idle seconds before the first prompt and after each prompt.
    #[arg(long)]
    settle_s: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Try to split a model-load phase off each window.
    #[arg(long)]
    split_load: bool,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long, env = "EDGEPROF_ARTIFACT_ROOT")]
    artifact_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory or trace file.
    path: PathBuf,
    /// Seconds of idle at the start of the trace used for the baseline.
    #[arg(long)]
    pre_window_s: Option<f64>,
    #[arg(long)]
    split_load: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Ols,
    TheilSen,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ols => FitMethod::Ols,
            MethodArg::TheilSen => FitMethod::TheilSen,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with x,y columns; a header row is skipped.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "ols")]
    method: MethodArg,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct KneeArgs {
    /// CSV with pixels,cost columns.
    #[arg(long)]
    input: PathBuf,
    /// Expected clamp, reported against the detected knee.
    #[arg(long)]
    clamp: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatchArg {
    Tokens,
    Pixels,
}

impl From<MatchArg> for MatchOn {
    fn from(m: MatchArg) -> Self {
        match m {
            MatchArg::Tokens => MatchOn::Tokens,
            MatchArg::Pixels => MatchOn::Pixels,
        }
    }
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    comp: PathBuf,
    /// Input attribute to pair steps on; defaults from the run kind.
    #[arg(long, value_enum)]
    on: Option<MatchArg>,
    /// Also write the comparison as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory; defaults to <artifact root>/report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare every other run against this one.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, value_enum)]
    on: Option<MatchArg>,
    /// Print where every table cell comes from.
    #[arg(long)]
    provenance: bool,
    #[arg(long, env = "EDGEPROF_ARTIFACT_ROOT")]
    artifact_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    run: PathBuf,
    /// Reference answers: a JSON array of strings, or text blocks separated by `---` lines.
    #[arg(long)]
    references: PathBuf,
    /// Second run answering the same inputs; degenerate answers are removed from both.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Scorer command line, whitespace separated. Falls back to lexical overlap.
    #[arg(long)]
    scorer: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = config::Config::load(cli.config.as_deref()).and_then(|cfg| match cli.cmd {
        Cmd::Ladder(a) => commands::ladder(a),
        Cmd::Sweep(a) => commands::sweep(*a, cfg),
        Cmd::Analyze(a) => commands::analyze(a, cfg),
        Cmd::Fit(a) => commands::fit(a),
        Cmd::Knee(a) => commands::knee(a),
        Cmd::Compare(a) => commands::compare(a),
        Cmd::Report(a) => commands::report(a, cfg),
        Cmd::Score(a) => commands::score(a, cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
