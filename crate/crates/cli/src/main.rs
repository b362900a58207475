use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use pruneclust_cli::error::Result;
use pruneclust_cli::run;
use std::path::PathBuf;
use std::process::ExitCode;

/// Cluster-guided structured filter pruning: train small convnets, prune
/// them by redundancy-aware criteria, and evaluate the pruned tickets.
#[derive(Parser)]
#[command(name = "pruneclust", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initial training; writes a checkpoint and a metrics CSV.
    Train {
        /// Experiment config (strict JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Iterative pruning with fine-tuning, from a trained checkpoint.
    Prune {
        /// Experiment config (strict JSON); must set target_sparsity.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also dump per-filter signature images, removed filters marked
        /// by a `_removed` filename suffix.
        #[arg(long)]
        dump_signatures: bool,
    },
    /// Lottery-ticket rewinding grid over the config's sparsity_list.
    Lottery {
        /// Experiment config (strict JSON); must set sparsity_list.
        #[arg(long)]
        config: PathBuf,
    },
    /// Signature images for one layer of a checkpoint.
    Signatures {
        /// Checkpoint to read the network from.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conv layer id (convs are numbered 0, 1, ... in network order).
        #[arg(long)]
        layer: usize,
        /// Output directory for the PGM files.
        #[arg(long, default_value = "signatures")]
        out: PathBuf,
        /// Gradient-ascent steps per filter.
        #[arg(long, default_value_t = 256)]
        steps: usize,
        /// Gradient-ascent step size.
        #[arg(long, default_value_t = 0.05)]
        step_size: f32,
        /// Noise seed for the initial images.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate metrics CSVs into mean +/- std tables.
    Report {
        /// Directory of metrics CSVs (as written by the other commands).
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => run::cmd_train(&config),
        Command::Prune { config, checkpoint, dump_signatures } => {
            run::cmd_prune(&config, &checkpoint, dump_signatures)
        }
        Command::Lottery { config } => run::cmd_lottery(&config),
        Command::Signatures { checkpoint, layer, out, steps, step_size, seed } => {
            run::cmd_signatures(&checkpoint, layer, &out, steps, step_size, seed)
        }
        Command::Report { input } => run::cmd_report(&input),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Bad flags or an unknown subcommand: usage goes to stderr and
            // the exit code is the config-error code.
            eprint!("{e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
