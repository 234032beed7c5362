mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use senso_core::training::Regime;

use commands::RunRecord;
use config::ExperimentConfig;

/// Sensitivity-constrained neural-operator experiments.
#[derive(Parser, Debug)]
#[command(name = "senso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config regime (FNO, SC-FNO, FNO-PINN, SC-FNO-PINN).
    #[arg(long)]
    regime: Option<Regime>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset into --out.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train an operator on --data (or on a freshly generated dataset).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate --model on the test split of --data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate --model on parameters drawn beyond the training ranges.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Retrain over training-set sizes, or re-evaluate --model over the
    /// config's lambda values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated training-set sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Parameter-inversion study through --model (or through the solver).
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Solver verification against the ODE1 closed form and autodiff checks.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Random ODE1 parameter draws.
        #[arg(long, default_value_t = 200)]
        draws: usize,
    },
    /// Re-run the command recorded in a run.json.
    Replay {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(regime) = common.regime {
        cfg.regime = regime;
    }
    Ok(cfg)
}

fn record(command: &str, common: &Common) -> Result<RunRecord> {
    Ok(RunRecord::new(command, base_config(common)?))
}

fn build(cli: Cli) -> Result<(RunRecord, Option<PathBuf>)> {
    Ok(match cli.command {
        Command::Gen { common } => (record("gen", &common)?, Some(common.out)),
        Command::Train { common, data } => (RunRecord { data, ..record("train", &common)? }, Some(common.out)),
        Command::Eval { common, model, data } => {
            (RunRecord { model: Some(model), data: Some(data), ..record("eval", &common)? }, Some(common.out))
        }
        Command::Perturb { common, model, lambda } => {
            let mut r = RunRecord { model: Some(model), ..record("perturb", &common)? };
            if let Some(l) = lambda {
                r.config.perturb.lambda = l;
            }
            (r, Some(common.out))
        }
        Command::Sweep { common, data, model, sizes } => {
            let mut r = RunRecord { data, model, ..record("sweep", &common)? };
            if let Some(sizes) = sizes {
                if sizes.is_empty() || sizes.contains(&0) {
                    bail!("--sizes needs positive integers");
                }
                r.config.sweep.axis = config::SweepAxis::TrainSize;
                r.config.sweep.values = sizes.iter().map(|&s| s as f64).collect();
            }
            (r, Some(common.out))
        }
        Command::Invert { common, model } => (RunRecord { model, ..record("invert", &common)? }, Some(common.out)),
        Command::Verify { out, seed, draws } => {
            let mut r = RunRecord::new("verify", ExperimentConfig { seed: seed.unwrap_or(0), ..ExperimentConfig::default() });
            r.verify_draws = Some(draws);
            (r, out)
        }
        Command::Replay { run, out } => {
            let text = std::fs::read_to_string(&run).with_context(|| format!("cannot read {}", run.display()))?;
            let r: RunRecord = serde_json::from_str(&text).with_context(|| format!("invalid run record {}", run.display()))?;
            (r, Some(out))
        }
    })
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SENSO_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("SENSO_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("SENSO_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let rendered = e.render().to_string();
            let line = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("senso: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = configure_threads().and_then(|_| build(cli)).and_then(|(record, out)| commands::execute(record, out.as_deref()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("senso: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
