use clap::{Parser, Subcommand};
use matcha_cli::{cmd_compare, cmd_decompose, cmd_sweep, cmd_train, ExperimentConfig};
use std::path::PathBuf;

/// Matching-based link scheduling for decentralized SGD: decomposition
/// reports, spectral-norm budget sweeps, training simulations and
/// baseline comparisons.
#[derive(Parser)]
#[command(name = "matcha", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a graph into matchings and write a report.
    Decompose {
        /// Graph JSON file: {"m": int, "edges": [[i, j], ...]}.
        #[arg(long)]
        graph: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Sweep communication budgets and report spectral norms per policy.
    Sweep {
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated budgets in (0, 1].
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run training simulations for every (policy, budget, seed) in the
    /// config.
    Train {
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize time-to-target-loss across completed runs.
    Compare {
        /// Manifest written by `train`.
        #[arg(long)]
        manifest: PathBuf,
        /// Loss threshold the averaged model must reach.
        #[arg(long)]
        target_loss: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose { graph, out } => cmd_decompose(&graph, &out),
        Command::Sweep {
            graph,
            budgets,
            out,
        } => cmd_sweep(&graph, &budgets, &out).map(|_| ()),
        Command::Train { config, out, seed } => (|| {
            let mut config =
                ExperimentConfig::from_file(&config).map_err(matcha_cli::CliFailure::Config)?;
            if let Some(out) = out {
                config.out_dir = out.to_string_lossy().into_owned();
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            cmd_train(&config, std::path::Path::new(".")).map(|_| ())
        })(),
        Command::Compare {
            manifest,
            target_loss,
            out,
        } => cmd_compare(&manifest, target_loss, &out).map(|_| ()),
    };
    if let Err(failure) = result {
        eprintln!("{}", failure.message());
        std::process::exit(failure.exit_code());
    }
}
