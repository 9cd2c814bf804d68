//! Library side of the `thema` binary: argument parsing, configuration and
//! the subcommands, exposed so tests can drive them in-process.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use thema_core::evaluation::TextMode;
use thema_core::ErrorKind;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] thema_core::Error),
}

impl CliError {
    /// 0 success, 1 usage or input error, 2 provider error, 3 parse error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => 1,
                ErrorKind::Provider => 2,
                ErrorKind::Parse => 3,
            },
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    thema_core::corpus::CorpusError,
    thema_core::prompting::PromptError,
    thema_core::gateway::GatewayError,
    thema_core::coding::CodingError,
    thema_core::theming::ThemingError,
    thema_core::evaluation::EvalError,
    thema_core::reporting::ReportError
);

#[derive(Debug, Parser)]
#[command(name = "thema", version, about = "LLM-assisted thematic analysis of interview transcripts")]
pub struct Cli {
    /// TOML configuration file (default: $THEMA_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print rendered prompts and planned requests; call nothing, write nothing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    #[arg(long, global = true)]
    pub output_root: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Code every transcript and aggregate the codebook.
    Code(CodeArgs),
    /// Generate one theme set from a codebook.
    Themes(ThemesArgs),
    /// Temperature sweep plus theme stability.
    Refine(RefineArgs),
    /// Compare themes with reference categories.
    Eval(EvalArgs),
    /// Code one transcript with two templates and compare the code lists.
    ComparePrompts(CompareArgs),
    /// Code, themes, refine, and eval when a reference is configured.
    Run(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub lang: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CodeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Coding template: builtin name or file.
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ThemesArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub min_themes: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Comma-separated sweep temperatures.
    #[arg(long, value_delimiter = ',')]
    pub temps: Option<Vec<f64>>,
    #[arg(long)]
    pub min_themes: Option<usize>,
    /// Stability match threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// A themes_T*.json file.
    #[arg(long)]
    pub themes: PathBuf,
    /// Reference categories CSV (id,label,detail).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Manual pairs CSV (row_label,col_label); greedy matching otherwise.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Human scores CSV (row_label,col_label,score).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub embed_text: Option<TextMode>,
    /// Diagonal threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub transcript: String,
    #[arg(long)]
    pub template_a: String,
    #[arg(long)]
    pub template_b: String,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

/// Applies global flags over the file configuration.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::discover(cli.config.as_deref())?;
    if let Some(id) = &cli.run_id {
        cfg.run_id = Some(id.clone());
    }
    if let Some(root) = &cli.output_root {
        cfg.output_root = root.clone();
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    match &cli.command {
        Command::Code(a) => {
            apply_corpus(&mut cfg, &a.corpus);
            set_opt(&mut cfg.templates.coding, &a.template);
        }
        Command::ComparePrompts(a) => apply_corpus(&mut cfg, &a.corpus),
        Command::Run(a) => {
            apply_corpus(&mut cfg, &a.corpus);
            set_opt(&mut cfg.reference, &a.reference);
            set_opt(&mut cfg.pairs, &a.pairs);
            set_opt(&mut cfg.scores, &a.scores);
        }
        Command::Themes(a) => {
            set(&mut cfg.min_themes, a.min_themes);
            set(&mut cfg.temperatures.theming, a.temperature);
            set_opt(&mut cfg.templates.theming, &a.template);
        }
        Command::Refine(a) => {
            set(&mut cfg.min_themes, a.min_themes);
            set(&mut cfg.thresholds.stability, a.threshold);
            set(&mut cfg.temperatures.sweep, a.temps.clone());
            set_opt(&mut cfg.templates.theming, &a.template);
        }
        Command::Eval(a) => {
            set_opt(&mut cfg.reference, &a.reference);
            set_opt(&mut cfg.pairs, &a.pairs);
            set_opt(&mut cfg.scores, &a.scores);
            set(&mut cfg.evaluation.embed_text, a.embed_text);
            set(&mut cfg.thresholds.diagonal, a.threshold);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T: Clone>(slot: &mut Option<T>, value: &Option<T>) {
    if value.is_some() {
        slot.clone_from(value);
    }
}

fn apply_corpus(cfg: &mut RunConfig, a: &CorpusArgs) {
    set_opt(&mut cfg.corpus_dir, &a.corpus);
    if let Some(lang) = &a.lang {
        cfg.language = lang.clone();
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("THEMA_LOG")
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let result = resolve_config(&cli).and_then(|cfg| commands::dispatch(&cli, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            e.exit_code()
        }
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut text = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        let next = s.to_string();
        if !text.contains(&next) {
            text.push_str(": ");
            text.push_str(&next);
        }
        source = s.source();
    }
    text
}
