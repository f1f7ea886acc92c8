//! `fsml`: command-line driver for the few-shot multi-label pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "fsml", version, about = "Few-shot multi-label intent detection")]
struct Cli {
    /// Base directory; every relative path is resolved against it.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// JSON config file. Flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Generate synthetic domains into the corpus directory.
    GenSynth,
    /// Toy-embed every utterance and label name of the corpus.
    EmbedToy,
    /// Build evaluation episodes for each domain (or only `--target`).
    Episodes,
    /// Train a model. With `--target`, that domain and the next one are held out.
    Train,
    /// Evaluate a model on the episodes of one domain, or run cross-validation.
    Eval {
        /// Rotate target/dev over all domains and average over `--seeds`.
        #[arg(long)]
        cross_validate: bool,
    },
    /// Predict the labels of one query against an episode's support set.
    Predict {
        #[arg(long)]
        query_id: String,
        #[arg(long, default_value_t = 0)]
        episode_index: usize,
    },
    /// Four-way comparison of baseline and full models.
    Ablate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<(), error::CliError> {
        let mut cfg = Config::load(cli.config.as_ref().map(|p| cli.workdir.join(p)).as_deref())?;
        cfg.apply(&cli.overrides);
        cfg.validate()?;
        commands::run(&cli.command, &cli.workdir, &cfg)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
