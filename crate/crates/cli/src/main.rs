use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idlive_cli::commands::{self, CalibrateArgs, EvalArgs, SynthArgs, TrainArgs, VerifyArgs};

/// Identity-conditioned face liveness detection pipeline.
///
/// Set IDLV_LOG to error, warn, info, or debug to control diagnostics.
#[derive(Parser)]
#[command(name = "idlive", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic spoof dataset in the standard layout.
    Synth(SynthArgs),
    /// Train the Siamese embedding network on same-client pairs.
    Train(TrainArgs),
    /// Build the reference gallery and calibrate the decision threshold.
    Calibrate(CalibrateArgs),
    /// Evaluate FRR/FAR/HTER on the test split and write a report.
    Eval(EvalArgs),
    /// Verify one probe image against a claimed client identity.
    Verify(VerifyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IDLV_LOG", "warn"))
        .format_timestamp(None)
        .init();

    // clap exits with code 2 (usage error) on bad arguments.
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Train(args) => commands::train(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Eval(args) => commands::eval(args),
        Command::Verify(args) => commands::verify_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
