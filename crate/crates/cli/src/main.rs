//! `focusgram`: span-focused PCFG induction from the command line.

mod analyze;
mod output;
mod pipeline;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "focusgram", version, about = "Unsupervised PCFG induction with parse-focusing")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a bracketed corpus from the built-in generator grammar.
    Synth(pipeline::SynthArgs),
    /// Train grammars with EM, one per seed.
    Induce(pipeline::InduceArgs),
    /// Build a focusing-bias file from parser trees or a synthetic branching scheme.
    Bias(pipeline::BiasArgs),
    /// Decode a corpus with a trained grammar.
    Parse(pipeline::ParseArgs),
    /// Sentence-level F1 of predicted trees against gold trees.
    Eval(analyze::EvalArgs),
    /// Diagnostic reports.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Check the flipped-pair equivalence on a random single-preterminal grammar.
    Soa(analyze::SoaArgs),
}

/// Corpus preprocessing switches shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct PreprocessFlags {
    /// Keep punctuation and empty elements.
    #[arg(long)]
    keep_punct: bool,
    /// Lowercase tokens.
    #[arg(long)]
    lowercase: bool,
}

impl PreprocessFlags {
    pub fn options(&self) -> focusgram::corpus::PreprocessOptions {
        let mut o = if self.keep_punct {
            focusgram::corpus::PreprocessOptions::keep_all()
        } else {
            focusgram::corpus::PreprocessOptions::default()
        };
        o.lowercase = self.lowercase;
        o
    }
}

/// Report rendering shared by the report subcommands.
#[derive(Debug, Clone, Args)]
pub struct ReportFlags {
    /// Write line-delimited JSON records instead of a table.
    #[arg(long)]
    json: bool,
    /// Output file (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Decoder {
    /// Maximum expected number of correct spans; unlabeled output.
    Mbr,
    /// Most probable derivation; output carries grammar symbols.
    Cyk,
}

/// A command-line value that parsed but makes no sense.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use focusgram::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::ZeroMeasure { .. } => 4,
                E::Param(_) => 2,
                E::Parse { .. } | E::Bracket { .. } | E::Alignment { .. } | E::Input(_) | E::Io(_) => 3,
            };
        }
        if cause.is::<UsageError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => pipeline::synth(a),
        Command::Induce(a) => pipeline::induce(a),
        Command::Bias(a) => pipeline::bias(a),
        Command::Parse(a) => pipeline::parse(a),
        Command::Eval(a) => analyze::eval(a),
        Command::Analyze(c) => analyze::analyze(c),
        Command::Soa(a) => analyze::soa(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(anyhow::Error::new(UsageError(format!("cannot start {} threads: {e}", cli.threads)))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
