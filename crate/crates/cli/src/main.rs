mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "cofrgenet", version, about = "Continued-fraction generative networks: train, evaluate and verify")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. `--set model.p=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for initialisation, sampling and the check sweeps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for metrics and checkpoints.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics.csv and checkpoint.cfgn to --out.
    Train {
        /// Continue from a checkpoint instead of initialising.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Report validation loss and perplexity of a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Generate bytes from a checkpoint with ranges clipped.
    Generate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        tokens: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Finite-difference checks of the analytic gradients.
    Gradcheck,
    /// Continuant identity, determinant and literal-equivalence sweeps.
    Identities,
    /// Exact parameter counts against the scale formulas.
    Params,
    /// Time the continuant and literal kernels.
    Bench,
    /// Print every configuration key with its default and meaning.
    ConfigReference,
}

/// Exit status for configuration problems.
const EXIT_CONFIG: u8 = 2;
/// Exit status for failed checks and runtime errors.
const EXIT_FAILURE: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("check.seed={seed}"));
    }
    if let Command::ConfigReference = cli.command {
        print!("{}", config::reference());
        return ExitCode::SUCCESS;
    }
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let outcome = match cli.command {
        Command::Train { resume } => commands::train(&cfg, &cli.out, resume.as_deref()),
        Command::Eval { checkpoint } => commands::eval(&cfg, &checkpoint),
        Command::Generate {
            checkpoint,
            prompt,
            tokens,
            temperature,
        } => commands::generate(&cfg, &checkpoint, prompt, tokens, temperature),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Identities => commands::identities(&cfg),
        Command::Params => commands::params(&cfg),
        Command::Bench => commands::bench(&cfg),
        Command::ConfigReference => unreachable!("handled above"),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .downcast_ref::<cofrgenet::Error>()
                .is_some_and(|e| matches!(e, cofrgenet::Error::Config(_) | cofrgenet::Error::UnknownVariant(_)));
            ExitCode::from(if config_error { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}
