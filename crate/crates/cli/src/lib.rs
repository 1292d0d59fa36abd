//! Command-line surface: synthetic generation, training, evaluation and
//! segmentation reports.

pub mod archive;
pub mod commands;
pub mod config;
pub mod segment;

use std::io::Write;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use archive::{ModelArchive, TrainingMetadata, ARCHIVE_VERSION};
pub use commands::{cmd_eval, cmd_segment, cmd_simgen, cmd_train, load_corpus, LoadedCorpus, Metrics};
pub use config::{ApplyArgs, SimgenArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(
    name = "emhrnn",
    version,
    about = "Hierarchical document classifier with EM-trained phrase boundaries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate synthetic train/test corpora with known indicators.
    Simgen(SimgenArgs),
    /// Train a model and write an archive plus per-epoch history.
    Train(TrainArgs),
    /// Accuracy and indicator recovery of an archived model.
    Eval(ApplyArgs),
    /// Phrase segmentation and attention report.
    Segment(ApplyArgs),
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simgen(a) => cmd_simgen(&a.resolve()?, out).map(drop),
        Command::Train(a) => cmd_train(&a.resolve()?, out).map(drop),
        Command::Eval(a) => cmd_eval(&a.resolve()?, out).map(drop),
        Command::Segment(a) => cmd_segment(&a.resolve()?, out).map(drop),
    }
}
