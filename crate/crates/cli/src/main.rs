//! `synthcap` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

mod commands;
mod config;
mod data;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use synthcap_core::metrics::CiderMode;
use synthcap_core::pipeline::PseudoLabelMode;

#[derive(Debug, Parser)]
#[command(name = "synthcap", version, about = "Novel-object captioning with synthetic training pairs")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, env = "SYNTHCAP_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "SYNTHCAP_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,
    #[arg(long, global = true, env = "SYNTHCAP_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated novel class names.
    #[arg(long, global = true, env = "SYNTHCAP_NOVEL", value_delimiter = ',')]
    pub novel: Option<Vec<String>>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load COCO-style annotations and build the held-out split.
    Split(SplitArgs),
    /// Rank replacement candidates from baseline captions.
    Candidates(CandidatesArgs),
    /// Plan and composite synthetic image-caption pairs.
    Synth(SynthArgs),
    /// Rewrite captions from a candidate class to a novel class.
    Rewrite(RewriteArgs),
    /// Caption images with a trained scorer.
    Decode(DecodeArgs),
    /// Generate pseudo-label captions for partially paired images.
    Pseudolabel(PseudolabelArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Run warm-up and pseudo-label rounds end to end.
    Train(TrainArgs),
    /// Serve the review API and UI.
    ReviewServe(ReviewServeArgs),
    /// Generate the small synthetic world and optionally run the pipeline on it.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// COCO instances JSON (repeatable, paired with --captions).
    #[arg(long, required = true, env = "SYNTHCAP_INSTANCES", value_delimiter = ',')]
    pub instances: Vec<PathBuf>,
    /// COCO captions JSON (repeatable, paired with --instances).
    #[arg(long, required = true, env = "SYNTHCAP_CAPTIONS", value_delimiter = ',')]
    pub captions: Vec<PathBuf>,
    /// Image ids held out for validation, one per line.
    #[arg(long, env = "SYNTHCAP_VAL_IDS")]
    pub val_ids: Option<PathBuf>,
    /// Image ids held out for testing, one per line.
    #[arg(long, env = "SYNTHCAP_TEST_IDS")]
    pub test_ids: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    /// Dataset directory written by `split`.
    #[arg(long, env = "SYNTHCAP_DATA")]
    pub data: PathBuf,
    /// Baseline captions on validation images (`decode` output).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub m: Option<usize>,
    /// Candidate map JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-class mention counts here.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "SYNTHCAP_DATA")]
    pub data: PathBuf,
    /// Candidate map JSON.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Directory dataset image paths are relative to.
    #[arg(long, env = "SYNTHCAP_IMAGE_ROOT")]
    pub image_root: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Print the generation plan and stop.
    #[arg(long)]
    pub dry_run: bool,
    /// Output directory for rasters and the manifest.
    #[arg(long, required_unless_present = "dry_run")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    #[arg(long)]
    pub candidate: String,
    #[arg(long = "to")]
    pub novel: String,
    /// Captions to rewrite; read from stdin, one per line, when absent.
    pub captions: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Val,
    Test,
    Partial,
    Fully,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Model JSON saved by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "SYNTHCAP_DATA")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    pub subset: Subset,
    /// Detection labels; when given, decode with constraints from them.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    BsAndCbs,
    CbsOnly,
}

impl From<ModeArg> for PseudoLabelMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::BsAndCbs => PseudoLabelMode::BsAndCbs,
            ModeArg::CbsOnly => PseudoLabelMode::CbsOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, env = "SYNTHCAP_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "SYNTHCAP_LABELS")]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CiderModeArg {
    Macro,
    Corpus,
}

impl From<CiderModeArg> for CiderMode {
    fn from(m: CiderModeArg) -> Self {
        match m {
            CiderModeArg::Macro => CiderMode::Macro,
            CiderModeArg::Corpus => CiderMode::Corpus,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions: JSONL with `image_id` and `tokens` or `caption`.
    #[arg(long)]
    pub pred: PathBuf,
    /// References: caption JSONL (e.g. `captions.jsonl` from `split`).
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub cider_mode: Option<CiderModeArg>,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "SYNTHCAP_DATA")]
    pub data: PathBuf,
    /// Synthetic manifest; its verdict log is applied.
    #[arg(long)]
    pub synth: Option<PathBuf>,
    #[arg(long, env = "SYNTHCAP_LABELS")]
    pub labels: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, env = "SYNTHCAP_IMAGE_ROOT")]
    pub image_root: PathBuf,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1", env = "SYNTHCAP_BIND")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = 8080, env = "SYNTHCAP_PORT")]
    pub port: u16,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the full pipeline into `<out>/run`.
    #[arg(long)]
    pub run: bool,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
