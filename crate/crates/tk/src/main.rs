//! The `tk` command-line interface: experiment-directory commands over the
//! library. Exit codes are a stable contract: 0 success, 2 usage or
//! configuration error, 3 conflict, 4 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tk::experiment::{self, ExperimentError};

#[derive(Parser)]
#[command(
    name = "tk",
    version,
    about = "Deep time-series modeling and interpretation toolkit"
)]
struct Cli {
    /// Experiment directory root.
    #[arg(long, global = true, env = "TK_ROOT", value_name = "DIR")]
    root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import a CSV and its meta JSON as a named dataset.
    Import {
        /// CSV file: header `timestamp,<component>,...`, ISO-8601 stamps.
        csv: PathBuf,
        /// Meta JSON: {"name", "delta_seconds", "components": [{"name", "role"}]}.
        meta: PathBuf,
        /// Replace an existing dataset of the same name.
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic dataset from a spec file and register it.
    Synth {
        /// Synthetic spec JSON (rule, noise, gaps, seed).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Replace an existing dataset of the same name.
        #[arg(long)]
        force: bool,
    },
    /// Train one model from a config file.
    Train {
        /// Train config JSON (dataset, task, arch, train).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Also write the training-curves SVG.
        #[arg(long)]
        viz: bool,
        /// Replace an existing model of the same name.
        #[arg(long)]
        force: bool,
    },
    /// Run a hyperparameter sweep from a config file.
    Sweep {
        /// Sweep config JSON (train config plus grid).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Replace an existing sweep tag or consolidated model.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a trained model on one split.
    Evaluate {
        /// Model name under models/.
        model: String,
        /// Split to evaluate: train, val, or eval.
        split: String,
        /// Also write the fit plot (regression) or confusion matrix
        /// (classification).
        #[arg(long)]
        viz: bool,
        /// Output components for the fit plot (default: all).
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        components: Vec<String>,
    },
    /// Attribute model predictions and render heatmaps.
    Interpret {
        /// Interpret config JSON (model, tag, attribution request).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Replace an existing interpretation tag.
        #[arg(long)]
        force: bool,
    },
    /// Check every artifact in the experiment directory for consistency.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, ExperimentError> {
    let root = cli.root.ok_or_else(|| {
        ExperimentError::Usage("no experiment root: pass --root or set TK_ROOT".into())
    })?;
    let lines = match cli.command {
        Command::Import { csv, meta, force } => {
            experiment::cmd_import(&root, &csv, &meta, force)?.lines()
        }
        Command::Synth { config, force } => experiment::cmd_synth(&root, &config, force)?.lines(),
        Command::Train { config, viz, force } => {
            experiment::cmd_train(&root, &config, viz, force)?.lines()
        }
        Command::Sweep { config, force } => experiment::cmd_sweep(&root, &config, force)?.lines(),
        Command::Evaluate {
            model,
            split,
            viz,
            components,
        } => experiment::cmd_evaluate(&root, &model, &split, viz, &components)?.lines(),
        Command::Interpret { config, force } => {
            experiment::cmd_interpret(&root, &config, force)?.lines()
        }
        Command::Verify => {
            let report = experiment::cmd_verify(&root)?;
            for line in report.lines() {
                println!("{line}");
            }
            return Ok(if report.is_consistent() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            });
        }
    };
    for line in lines {
        println!("{line}");
    }
    Ok(ExitCode::SUCCESS)
}
