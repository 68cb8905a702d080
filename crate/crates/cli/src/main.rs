//! `uqroute`: batch tools for uncertainty-based routing and the live gateway.

mod commands;
mod inputs;

use std::fmt::Debug;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use uqroute_core::calibration::CalibrationError;
use uqroute_core::table::TableError;
use uqroute_core::{EvalError, LabelError, ProbeError, ScoreError, TraceError};
use uqroute_gateway::config::ConfigError;
use uqroute_gateway::ServeError;

#[derive(Debug, Parser)]
#[command(name = "uqroute", version, about = "Uncertainty-based routing between a small and a large language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score traces with one uncertainty method.
    Score(commands::ScoreArgs),
    /// AUC of confidence against correctness, and relative accuracy.
    Eval(commands::EvalArgs),
    /// Overall accuracy against routing ratio, with the oracle curve.
    Sweep(commands::SweepArgs),
    /// Build a leave-one-out calibration set and transfer thresholds.
    Calibrate(commands::CalibrateArgs),
    /// Train a hidden-state probe.
    TrainProbe(commands::TrainProbeArgs),
    /// Write a synthetic trace file.
    Synth(commands::SynthArgs),
    /// Run the HTTP routing gateway.
    Serve(commands::ServeArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Leading identifier of a `Debug` rendering, i.e. the enum variant name.
fn variant<E: Debug>(e: &E) -> String {
    format!("{e:?}")
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect()
}

impl CliError {
    fn kind(&self) -> String {
        match self {
            Self::Usage(_) => "Usage".into(),
            Self::Io(_) => "Io".into(),
            Self::Trace(e) => variant(e),
            Self::Score(e) => variant(e),
            Self::Eval(e) => variant(e),
            Self::Label(e) => variant(e),
            Self::Table(e) => variant(e),
            Self::Probe(e) => variant(e),
            Self::Calibration(e) => match e {
                CalibrationError::Score(inner) => variant(inner),
                CalibrationError::Eval(inner) => variant(inner),
                other => variant(other),
            },
            Self::Config(_) | Self::Serve(ServeError::Config(_)) => "Config".into(),
            Self::Serve(e) => variant(e),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn report(kind: &str, message: &str) {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: kind={kind} message={message}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            report("Usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Score(a) => commands::score(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::TrainProbe(a) => commands::train_probe_cmd(a),
        Command::Synth(a) => commands::synth(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e.kind(), &e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
