use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlpinn::cli::{run, Command};

/// Nonlocal PINN training and material identification.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a manufactured dataset.
    GenData(Common),
    /// Check operator exactness on a quadratic and write the operator table.
    CheckPddo(Common),
    /// Solve for the fields with the material fixed.
    Train(Common),
    /// Identify the trainable material constants.
    Identify(Common),
    /// Loss and field errors of a saved checkpoint.
    Evaluate(Common),
    /// Predicted fields as CSV and PGM heatmaps.
    ExportFields(Common),
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `section.key=value` overrides, applied in order.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let (cmd, common) = match args.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::CheckPddo(c) => (Command::CheckPddo, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Identify(c) => (Command::Identify, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::ExportFields(c) => (Command::ExportFields, c),
    };
    let code = run(cmd, common.config.as_deref(), &common.overrides);
    ExitCode::from(code as u8)
}
