mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use railcause::corpus::LabelScheme;

use crate::config::{EmbeddingKind, ModelKind, Overrides};

/// Railroad accident narrative cause classifier.
#[derive(Parser)]
#[command(name = "railcause", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw CSVs, label, split, and write the dataset and a label distribution table.
    Prepare(RunArgs),
    /// Train an embedding x architecture pair or a baseline on the prepared dataset.
    Train(RunArgs),
    /// Score the trained model on the test split and write metric reports.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Model directory; defaults to `<output_dir>/model`.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Rank the causes of a single narrative.
    Predict {
        #[arg(long)]
        model_dir: PathBuf,
        /// Narrative text.
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        /// File holding one narrative.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Number of causes to list.
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
    /// Nearest neighbours of a word in a GloVe-format embedding file.
    Inspect {
        embedding_file: PathBuf,
        word: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scheme: Option<LabelScheme>,
    #[arg(long)]
    embedding: Option<EmbeddingKind>,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Print machine-readable JSON instead of a table.
    #[arg(long)]
    json: bool,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            scheme: self.scheme,
            embedding: self.embedding,
            model: self.model,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare(args.config.as_deref(), &args.overrides(), args.json),
        Command::Train(args) => commands::train(args.config.as_deref(), &args.overrides(), args.json),
        Command::Evaluate { run, model_dir } => {
            commands::evaluate(run.config.as_deref(), &run.overrides(), model_dir.as_deref(), run.json)
        }
        Command::Predict {
            model_dir,
            text,
            file,
            top,
            json,
        } => commands::predict(&model_dir, text, file.as_deref(), top, json),
        Command::Inspect {
            embedding_file,
            word,
            k,
            json,
        } => commands::inspect(&embedding_file, &word, k, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("railcause: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
