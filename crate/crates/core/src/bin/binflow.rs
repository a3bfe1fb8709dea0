use std::path::PathBuf;
use std::process::ExitCode;

use binflow::cli::{
    cmd_nll, cmd_report, cmd_sample, cmd_train, cmd_validate, exit_code_for, CommandOutcome,
    ExperimentConfig,
};
use clap::{Args, Parser, Subcommand};

/// Binomial-flow discrete diffusion: training, sampling, likelihoods and
/// identity checks.
#[derive(Parser)]
#[command(name = "binflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `io.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Trained checkpoint; defaults to the run directory's checkpoint.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the exact denoiser of the config's target.
    #[arg(long)]
    oracle: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser and write its checkpoint and loss history.
    Train(Common),
    /// Draw final states from the sampler.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Per-sample negative log-likelihoods.
    Nll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// CSV of evaluation points; freshly sampled from the target if absent.
        #[arg(long)]
        eval_set: Option<PathBuf>,
    },
    /// Run the diagnostics suite; exits 3 when a check fails.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Aggregate summaries of the runs under a directory.
    Report {
        /// Directory holding run directories.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> binflow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.io.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> binflow::Result<CommandOutcome> {
    match cli.command {
        Command::Train(common) => cmd_train(&load(&common)?),
        Command::Sample { common, model } => {
            cmd_sample(&load(&common)?, model.checkpoint.as_deref(), model.oracle)
        }
        Command::Nll {
            common,
            model,
            eval_set,
        } => cmd_nll(
            &load(&common)?,
            model.checkpoint.as_deref(),
            model.oracle,
            eval_set.as_deref(),
        ),
        Command::Validate { common, model } => {
            cmd_validate(&load(&common)?, model.checkpoint.as_deref(), model.oracle)
        }
        Command::Report { out } => cmd_report(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.run_dir.display());
            ExitCode::from(outcome.exit_code)
        }
        Err(err) => {
            let code = exit_code_for(&err);
            eprintln!("error: {:#}", anyhow::Error::new(err).context("binflow failed"));
            ExitCode::from(code)
        }
    }
}
