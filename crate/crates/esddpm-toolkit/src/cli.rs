//! Command-line surface of the `esddpm` binary.
//!
//! Exit codes: 0 success, 1 runtime failure (or failed verification),
//! 2 usage error (from the argument parser), 3 configuration error.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Desk-scale workbench for early-stopped denoising diffusion:
/// fit a base generator, train a truncated denoiser, then sample,
/// sweep, evaluate, edit, and verify.
#[derive(Debug, Parser)]
#[command(name = "esddpm", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file plus the universal seed override.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Path to the run configuration file (key = value lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed named in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the configured base generator and write base.ckpt.
    FitBase {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the truncated denoiser and write model.ckpt.
    TrainDiffusion {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Draw samples from base plus denoiser; CSV to stdout and artifacts
    /// to the output directory.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        /// How many samples to draw (default: the config's sample_count).
        #[arg(long)]
        count: Option<usize>,
        /// Respace the reverse pass to this many steps (0 keeps it dense).
        #[arg(long)]
        plan_steps: Option<usize>,
        /// Model checkpoint to sample from (default: out_dir/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Base checkpoint to propose from (default: out_dir/base.ckpt).
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Evaluate the sampler at several stop steps; one metric row each.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated stop steps, e.g. --tprimes 0,50,100,200.
        #[arg(long, value_delimiter = ',', required = true)]
        tprimes: Vec<usize>,
    },
    /// Score an existing sample dump against the configured dataset.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Sample CSV to score (default: out_dir/samples.csv).
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Edit data points off the manifold and refine them back.
    Edit {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of edit trials (default 100).
        #[arg(long)]
        trials: Option<usize>,
        /// Refinement stop step (default: half the config's t_prime).
        #[arg(long)]
        horizon: Option<usize>,
        /// Model checkpoint to refine with (default: out_dir/model.ckpt).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the numerical invariant suite; nonzero exit on any failure.
    Verify {
        /// Seed for the suite's sub-checks (default 0).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_cli_definition_is_internally_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn tprimes_parse_as_a_comma_list() {
        let cli = Cli::parse_from([
            "esddpm", "sweep", "--config", "run.cfg", "--tprimes", "0,50,100",
        ]);
        match cli.command {
            Command::Sweep { tprimes, .. } => assert_eq!(tprimes, vec![0, 50, 100]),
            _ => panic!("parsed the wrong subcommand"),
        }
    }

    #[test]
    fn seed_override_is_optional_everywhere() {
        let cli = Cli::parse_from(["esddpm", "fit-base", "--config", "run.cfg", "--seed", "9"]);
        match cli.command {
            Command::FitBase { config } => assert_eq!(config.seed, Some(9)),
            _ => panic!("parsed the wrong subcommand"),
        }
    }
}
