mod commands;
mod config;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorekt::ErrorClass;

/// Problem with how the tool was invoked: flags, config file or missing inputs.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "lorekt", version, about = "Pre-train, probe and fine-tune knowledge-tracing transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file and its ground-truth sidecar.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Dataset to generate; may be omitted if only one has a synthetic section.
        #[arg(long)]
        dataset: Option<String>,
        /// Output file; defaults to the dataset's configured path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter, segment and split raw datasets.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Only this dataset; all datasets if omitted.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Jointly train on every rich dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Output checkpoint; defaults to `<checkpoints>/pretrain.lrkt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the importance profile of a pre-trained model on a dataset.
    Importance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Output profile; defaults to `<workdir>/profiles/<dataset>.importance.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune on one dataset, optionally with an importance profile.
    /// Without `--checkpoint` a fresh model is trained from scratch.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Output checkpoint; defaults to a name derived from the run under `<checkpoints>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report AUC and accuracy of a checkpoint on validation and test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only this dataset; every configured dataset known to the checkpoint if omitted.
        #[arg(long)]
        dataset: Option<String>,
        /// Report path stem; `.json` and `.csv` are appended.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth { common, dataset, out } => commands::synth(&common, dataset.as_deref(), out.as_deref()),
        Command::Preprocess { common, dataset } => commands::preprocess(&common, dataset.as_deref()),
        Command::Pretrain { common, out } => commands::pretrain(&common, out.as_deref()),
        Command::Importance { common, checkpoint, dataset, out } => {
            commands::importance(&common, &checkpoint, &dataset, out.as_deref())
        }
        Command::Finetune { common, checkpoint, dataset, profile, out } => {
            commands::finetune(&common, checkpoint.as_deref(), &dataset, profile.as_deref(), out.as_deref())
        }
        Command::Eval { common, checkpoint, dataset, out } => {
            commands::eval(&common, &checkpoint, dataset.as_deref(), out.as_deref())
        }
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<lorekt::Error>().map(lorekt::Error::class) {
        Some(ErrorClass::Usage) => EXIT_USAGE,
        Some(ErrorClass::Numerical) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}
