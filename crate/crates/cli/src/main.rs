use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsindy_cli::config::PipelineConfig;
use lsindy_cli::{
    evaluate, gen, identify, pipeline, predict, simulate, summary, Stage, StageError,
};

/// Latent sparse identification of swing-equation grid dynamics.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log errors; the summary line is still printed.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write network.json from a synthetic spec or a network file.
    Gen,
    /// Integrate the full model and write trajectory and snapshot CSVs.
    Simulate,
    /// Reduce, build the library and fit the sparse model.
    Identify,
    /// Integrate the identified model from the recorded initial state.
    Predict,
    /// Compare prediction and truth.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
}

fn run(cli: &Cli) -> Result<Option<String>, StageError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|source| StageError {
            stage: Stage::Config,
            source,
        })?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let out = cfg.output_dir.clone();
    Ok(match cli.command {
        Command::Gen => gen(&cfg, &out).map(|_| None)?,
        Command::Simulate => simulate(&cfg, &out).map(|_| None)?,
        Command::Identify => identify(&cfg, &out).map(|_| None)?,
        Command::Predict => predict(&cfg, &out).map(|_| None)?,
        Command::Evaluate => Some(summary(&evaluate(&cfg, &out)?)),
        Command::Pipeline => Some(summary(&pipeline(&cfg, &out)?)),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(line) => {
            if let Some(line) = line {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
