//! Entry point of the `esddpm` binary: parse arguments, load the run
//! configuration, dispatch to the command implementations, map errors
//! to exit codes (1 runtime, 2 usage, 3 configuration).

use clap::Parser;
use esddpm_toolkit::cli::{Cli, Command, ConfigArgs};
use esddpm_toolkit::config::RunConfig;
use esddpm_toolkit::report::write_check_rows;
use esddpm_toolkit::runner::{self, EditOpts, RunError, SampleOpts};
use esddpm_toolkit::verify::run_verification;
use std::process::ExitCode;

fn load(args: &ConfigArgs) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, RunError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::FitBase { config } => {
            runner::cmd_fit_base(&load(&config)?, &mut out)?;
        }
        Command::TrainDiffusion { config } => {
            runner::cmd_train_diffusion(&load(&config)?, &mut out)?;
        }
        Command::Sample {
            config,
            count,
            plan_steps,
            model,
            base,
        } => {
            let opts = SampleOpts {
                count,
                plan_steps,
                model,
                base,
            };
            runner::cmd_sample(&load(&config)?, &opts, &mut out)?;
        }
        Command::Sweep { config, tprimes } => {
            runner::cmd_sweep(&load(&config)?, &tprimes, &mut out)?;
        }
        Command::Evaluate { config, samples } => {
            runner::cmd_evaluate(&load(&config)?, samples.as_deref(), &mut out)?;
        }
        Command::Edit {
            config,
            trials,
            horizon,
            model,
        } => {
            let opts = EditOpts {
                trials,
                horizon,
                model,
            };
            runner::cmd_edit(&load(&config)?, &opts, &mut out)?;
        }
        Command::Verify { seed } => {
            let outcomes = run_verification(seed.unwrap_or(0));
            write_check_rows(&mut out, &outcomes).map_err(RunError::from)?;
            let failed = outcomes.iter().filter(|o| !o.pass).count();
            if failed > 0 {
                eprintln!("verify: {failed}/{} checks failed", outcomes.len());
                return Ok(ExitCode::from(1));
            }
            eprintln!("verify: all {} checks passed", outcomes.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
