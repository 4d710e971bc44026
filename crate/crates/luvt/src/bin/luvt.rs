use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use luvt::error::{Error, Result};
use luvt::harness::{self, ExperimentConfig};

/// Unsupervised defect detection on ultrasonic wave-propagation imagery.
#[derive(Parser)]
#[command(name = "luvt", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Line-based `key = value` config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; per-stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Model family.
    #[arg(long, global = true, value_parser = ["ddpm", "vae"])]
    model: Option<String>,

    /// Output root (default: $LUVT_OUT_ROOT, then ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of seeded evaluation repetitions.
    #[arg(long, global = true)]
    repetitions: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the train and test datasets.
    Synth,
    /// Train the selected model on the defect-free training data.
    Train,
    /// Reconstruct the test split, localize defects, and emit reports.
    Evaluate,
    /// Print the summaries of previous evaluations.
    Report,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(model) = &cli.model {
        cfg.model = model.parse()?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(reps) = cli.repetitions {
        cfg.repetitions = reps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Synth => harness::cmd_synth(&cfg),
        Command::Train => harness::cmd_train(&cfg).map(|_| ()),
        Command::Evaluate => harness::cmd_evaluate(&cfg).map(|_| ()),
        Command::Report => harness::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("error: usage: {}", e.kind());
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) => 1u8,
                _ => 2u8,
            })
        }
    }
}
