use std::process::ExitCode;

use cavenet::cli::{run, Command};
use cavenet::config::{describe_keys, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cavenet",
    version,
    about = "Capsule-endoscopy frame classification pipeline",
    after_help = format!(
        "Every command accepts `--config <file>` and `--key value` overrides.\nKeys (default in second column):\n{}",
        describe_keys()
    )
)]
struct Cli {
    #[command(subcommand)]
    command: Stage,
}

#[derive(Args)]
struct Overrides {
    /// `--config <file>` and `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Stage {
    /// Generate a synthetic corpus, or ingest `data_dir`, into dataset/.
    GenData(Overrides),
    /// Stratified split into val/ and an augmented, balanced train/.
    Balance(Overrides),
    /// Train the residual autoencoder.
    TrainAe(Overrides),
    /// Merge reconstructions and write training and validation latents.
    Extract(Overrides),
    /// Cross-validate and fit the dense classifier on latents.
    TrainDnn(Overrides),
    /// Fit the SVM, random forest, KNN and boosted-tree ensemble on latents.
    TrainSynxrf(Overrides),
    /// Train the attention-refined residual classifier on images.
    TrainCbam(Overrides),
    /// Predict the validation split with every member and the fused model.
    Fuse(Overrides),
    /// Fused predictions for `input` (default: the validation split).
    Predict(Overrides),
    /// Confusion matrices, heatmaps and metrics for every prediction file.
    Evaluate(Overrides),
    /// Collect evaluations into report.csv.
    Report(Overrides),
}

impl Stage {
    fn split(self) -> (Command, Vec<String>) {
        match self {
            Stage::GenData(o) => (Command::GenData, o.args),
            Stage::Balance(o) => (Command::Balance, o.args),
            Stage::TrainAe(o) => (Command::TrainAe, o.args),
            Stage::Extract(o) => (Command::Extract, o.args),
            Stage::TrainDnn(o) => (Command::TrainDnn, o.args),
            Stage::TrainSynxrf(o) => (Command::TrainSynxrf, o.args),
            Stage::TrainCbam(o) => (Command::TrainCbam, o.args),
            Stage::Fuse(o) => (Command::Fuse, o.args),
            Stage::Predict(o) => (Command::Predict, o.args),
            Stage::Evaluate(o) => (Command::Evaluate, o.args),
            Stage::Report(o) => (Command::Report, o.args),
        }
    }
}

fn main() -> ExitCode {
    let (cmd, args) = Cli::parse().command.split();
    let result = RunConfig::from_args(&args).and_then(|cfg| run(cmd, &cfg));
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // One line, `error[<kind>] <command>: <message>`, for scripts.
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}] {}: {msg}", e.kind(), cmd.name());
            ExitCode::FAILURE
        }
    }
}
