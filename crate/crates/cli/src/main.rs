mod commands;
mod config;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{resolve, EmbedArgs, EvalArgs, GradcheckArgs, OversmoothArgs, SynthArgs, TrainArgs};

/// Failure of the numerics rather than of the input.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

#[derive(Parser)]
#[command(name = "ihnn", version, about = "Implicit hypergraph neural network")]
struct Cli {
    /// TOML file with the command's keys; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-partition dataset directory
    Synth(SynthArgs),
    /// Train on a dataset; writes model.txt, metrics.csv and report.json
    Train(TrainArgs),
    /// Test-mask accuracy of a trained model, overall and per class
    Eval(EvalArgs),
    /// Compare implicit gradients with central differences
    #[command(after_help = "Defaults here: hidden_dim 3, batch_size 8, val_fraction 0, \
        forward/backward tol 1e-14 with max_iter 20000. Exits with code 2 if any \
        parameter misses the tolerance.")]
    Gradcheck(GradcheckArgs),
    /// Depth sweep: HGNN with 2..=6 layers against IHNN over several seeds
    #[command(after_help = "Defaults here: epochs 300, learning_rate 0.02, momentum 0.9, \
        hidden_dim 8; every other model key as for `train`. The CSV has columns \
        model,depth,seed,accuracy with depth `inf` for IHNN and accuracy `failed` \
        for runs that errored.")]
    Oversmooth(OversmoothArgs),
    /// Export the fixed-point node and hyperedge embeddings as CSV
    Embed(EmbedArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(&resolve(&a, file)?),
        Command::Train(a) => commands::train(&resolve(&a, file)?),
        Command::Eval(a) => commands::eval(&resolve(&a, file)?),
        Command::Gradcheck(a) => commands::gradcheck(&resolve(&a, file)?),
        Command::Oversmooth(a) => commands::oversmooth(&resolve(&a, file)?),
        Command::Embed(a) => commands::embed(&resolve(&a, file)?),
    }
}

/// 2 for numerical failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<NumericalFailure>().is_some()
            || e.downcast_ref::<ihnn::Error>().is_some_and(ihnn::Error::is_numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
