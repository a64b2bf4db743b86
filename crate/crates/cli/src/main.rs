use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tcprobe::classifier::Profile;

mod commands;
mod config;
mod run;

/// An error in the user's input: bad flags, config or input files.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser, Debug)]
#[command(
    name = "tcprobe",
    version,
    about = "Template/content probing of language models"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true, env = "TCPROBE_OUT")]
    pub out: Option<PathBuf>,
    /// oracle:<grammar>, remote:<url>, noise:<seed> or noise-position:<seed>
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Base URL of a wire-protocol server; used when --backend is not given
    #[arg(long, global = true, env = "TCPROBE_ENDPOINT", hide_env_values = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// TOML file with defaults for any option
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    ConcatLetters,
    ConcatAlt,
    ChickenRabbit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    ConcatLetters,
    SingleEq,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::ConcatLetters => Profile::ConcatLetters,
            ProfileArg::SingleEq => Profile::SingleEq,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AugmentMode {
    Content,
    Synonym,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate probe datasets
    Gen {
        kind: GenKind,
        /// Number of reference samples
        #[arg(long)]
        n: Option<usize>,
        /// Content-replaced variants per sample
        #[arg(long)]
        replacements: Option<usize>,
        /// Also emit this many fresh question/answer pairs per sample
        #[arg(long)]
        answers_per: Option<usize>,
        /// Word pool for the concatenation tasks, one word per line
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Measure per-position variance and compute DMV and AUC-ROC
    Probe {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Label answer words as template or content
    Classify {
        /// Dataset file; each reference answer is classified
        #[arg(long, conflicts_with = "prompt_spec")]
        dataset: Option<PathBuf>,
        /// Prompt spec JSON file, used with --sentence
        #[arg(long, requires = "sentence")]
        prompt_spec: Option<PathBuf>,
        #[arg(long)]
        sentence: Option<String>,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Serve a grammar oracle over the wire protocol
    ServeOracle {
        /// Built-in grammar name or grammar file
        #[arg(long)]
        grammar: String,
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
    },
    /// Check label consistency and hierarchical generation of samples
    CheckHierarchy {
        #[arg(long)]
        grammar: String,
        /// JSON lines: dataset records or plain JSON strings
        #[arg(long)]
        samples: PathBuf,
        /// Claimed dependency matrix, e.g. "1;0,1;0,1,1"
        #[arg(long)]
        dependency: Option<String>,
        #[arg(long, default_value_t = tcprobe::oracle::DEFAULT_EXHAUSTION_CAP)]
        cap: u128,
    },
    /// Emit an augmentation corpus from a dataset
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: AugmentMode,
        /// Fresh pairs per sample (content mode)
        #[arg(long)]
        k: Option<usize>,
        /// Synonym table, TOML or JSON map from word to synonyms (synonym mode)
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// Replacement probability (synonym mode)
        #[arg(long)]
        p_replace: Option<f64>,
        /// Word pool for the concatenation tasks
        #[arg(long)]
        pool: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<InputError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
