use std::path::PathBuf;
use std::process::ExitCode;

use avoinv_cli::commands::{self, Context};
use avoinv_cli::{CliError, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "avoinv",
    version,
    about = "Bayesian AVO inversion with FFT priors, surrogates and MCMC"
)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a configuration value, e.g. `--set chain.iterations=5000`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate depth, truth, data, prior means and surrogate training/test sets.
    MakeSynthetic,
    /// Fit a MARS or kernel-regression surrogate and report held-out fidelity.
    FitSurrogate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// `mars` or `npkr`; defaults to `surrogate.kind`.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Evaluate a fitted surrogate on a data set and time it against the forward model.
    EvalSurrogate {
        /// Directory written by `fit-surrogate`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Tune and run one Metropolis-Hastings chain.
    RunChain {
        /// Directory written by `make-synthetic`.
        #[arg(long)]
        problem: PathBuf,
        /// Directory written by `fit-surrogate`.
        #[arg(long)]
        surrogate: Option<PathBuf>,
    },
    /// Tune each proposal kernel and compare effective sample size per second.
    CompareProposals {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        surrogate: Option<PathBuf>,
    },
    /// Recompute maps, ternary extracts and ESS from a saved chain.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
    },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let text = match &cli.config {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut overrides = cli.overrides.clone();
    if let Command::Diagnose { chain } = &cli.command {
        // The grid comes from the chain file when no configuration names it.
        let has_grid = text.as_deref().is_some_and(|t| t.contains("[grid]"))
            || overrides.iter().any(|o| o.starts_with("grid."));
        if !has_grid {
            let file = std::fs::File::open(chain)
                .map_err(|e| CliError::Io(format!("{}: {e}", chain.display())))?;
            let samples = avoinv::mcmc::ChainSamples::read_from(&mut std::io::BufReader::new(file))
                .map_err(|e| CliError::Io(format!("{}: {e}", chain.display())))?;
            overrides.insert(0, format!("grid.nx={}", samples.grid.nx));
            overrides.insert(1, format!("grid.ny={}", samples.grid.ny));
        }
    }
    let cfg = ExperimentConfig::load(text.as_deref(), &overrides, cli.seed)?;
    let ctx = Context {
        cfg,
        out: cli.out.clone(),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::MakeSynthetic => commands::make_synthetic(&ctx),
        Command::FitSurrogate { train, test, kind } => {
            commands::fit_surrogate_cmd(&ctx, train, test, kind.as_deref())
        }
        Command::EvalSurrogate { model, test } => commands::eval_surrogate_cmd(&ctx, model, test),
        Command::RunChain { problem, surrogate } => {
            commands::run_chain_cmd(&ctx, problem, surrogate.as_deref())
        }
        Command::CompareProposals { problem, surrogate } => {
            commands::compare_proposals_cmd(&ctx, problem, surrogate.as_deref())
        }
        Command::Diagnose { chain } => commands::diagnose_cmd(&ctx, chain),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match run(cli) {
        Ok(dir) => {
            if !quiet {
                eprintln!("wrote {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
