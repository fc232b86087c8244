use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;
mod settings;

/// Hierarchical skeleton transformer: synthetic data, pre-training,
/// fine-tuning, evaluation and the level ablation.
#[derive(Parser, Debug)]
#[command(name = "hiskel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every command; each one overrides the matching config key.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value config (or a manifest.json from an earlier run to replay it)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (`seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Initialize the encoder from this checkpoint (`finetune.from`)
    #[arg(long, global = true, conflicts_with = "random_init")]
    from_checkpoint: Option<PathBuf>,
    /// Ignore any `finetune.from` and start from a random encoder
    #[arg(long, global = true)]
    random_init: bool,
    /// Pre-training levels such as F, F+C or F+C+V (`pretrain.levels`)
    #[arg(long, global = true)]
    levels: Option<String>,
    /// Labelled fraction of the training set, in (0, 1] (`finetune.label_fraction`)
    #[arg(long, global = true)]
    label_fraction: Option<f64>,
    /// recognition, detection or motion (`task`)
    #[arg(long, global = true)]
    task: Option<String>,
    /// Input view (`stream`)
    #[arg(long, global = true, value_parser = ["joint", "bone", "motion"])]
    stream: Option<String>,
    /// Fuse the scores of these recognition reports (eval)
    #[arg(long, global = true, num_args = 1..)]
    fuse: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec
    GenData,
    /// Self-supervised pre-training
    Pretrain {
        /// Continue from a pre-training checkpoint (`pretrain.resume`)
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the encoder and a task head on labelled data
    Finetune,
    /// Evaluate a fine-tuned checkpoint, or fuse recognition reports
    Eval {
        /// Dataset to evaluate on (`data.test`)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Pre-train and fine-tune once per level subset and tabulate the results
    Ablate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let common = &cli.common;
    let result = match &cli.command {
        Command::GenData => commands::gen_data(common),
        Command::Pretrain { resume } => commands::pretrain(common, resume.as_deref()),
        Command::Finetune => commands::finetune(common),
        Command::Eval { data } => commands::eval(common, data.as_deref()),
        Command::Ablate => commands::ablate(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
