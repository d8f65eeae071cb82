//! `avscene`: data preparation, training, evaluation and diagnostics for
//! the audio-visual scene classifier.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, ExtractArgs, GradcheckArgs, ParamsArgs, PredictArgs, PrepareArgs, TrainArgs};

#[derive(Parser)]
#[command(name = "avscene", version, about = "Audio-visual urban scene classification")]
struct Cli {
    /// Log level (error, warn, info, debug)
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic complementary-modality dataset
    PrepareSynthetic(PrepareArgs),
    /// Cache backbone features for every frame of a manifest
    ExtractFeatures(ExtractArgs),
    /// Run one training stage
    Train(TrainArgs),
    /// Score a checkpoint on a manifest split
    Evaluate(EvaluateArgs),
    /// Predict one 10 s example
    Predict(PredictArgs),
    /// Print the parameter budget
    Params(ParamsArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
}

/// 2: bad arguments or configuration, 3: unreadable or invalid data,
/// 4: a check failed.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<avscene_core::Error>() {
            Some(avscene_core::Error::Config(_)) => 2,
            Some(avscene_core::Error::FrozenViolation(_)) => 4,
            _ => 3,
        };
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::PrepareSynthetic(a) => commands::prepare_synthetic(a),
        Command::ExtractFeatures(a) => commands::extract_features(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Params(a) => commands::params(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
