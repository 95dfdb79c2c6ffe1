use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tspm_cli::commands::{
    cmd_analyze_cka, cmd_eval, cmd_inspect_periods, cmd_synth, cmd_train, Split,
};
use tspm_cli::CliError;

#[derive(Parser)]
#[command(
    name = "tspm",
    version,
    about = "Train, evaluate and inspect multi-scale time-series models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes `<config>.ckpt` and `<config>.report.json` beside the config.
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        dump_predictions: Option<PathBuf>,
    },
    /// Print the dominant periods of the first window of a CSV.
    InspectPeriods {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Layer-by-layer CKA similarity of a trained model's representations.
    AnalyzeCka {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the configured synthetic series to CSV.
    Synth {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let value = match cli.command {
        Command::Train { config } => serde_json::to_value(cmd_train(&config)?),
        Command::Eval {
            config,
            checkpoint,
            split,
            dump_predictions,
        } => serde_json::to_value(cmd_eval(
            &config,
            &checkpoint,
            split.parse::<Split>()?,
            dump_predictions.as_deref(),
        )?),
        Command::InspectPeriods { config, csv } => Ok(cmd_inspect_periods(&config, &csv)?),
        Command::AnalyzeCka { config, checkpoint } => Ok(cmd_analyze_cka(&config, &checkpoint)?),
        Command::Synth { config, output } => Ok(cmd_synth(&config, &output)?),
    };
    value.map_err(|e| CliError::Io(e.to_string()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(
                std::io::stdout().lock(),
                "{}",
                serde_json::to_string_pretty(&v).expect("json value serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
