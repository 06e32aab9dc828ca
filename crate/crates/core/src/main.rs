use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde_json::json;

use ssm_lfi::bench::{moving_window_sweep, run_benchmark, write_outputs, BenchConfig, BenchReport};
use ssm_lfi::engine::Method;
use ssm_lfi::oracle::{kde_map_estimate, rejection_abc};
use ssm_lfi::ssm::{summarize, ModelKind, SsmModel};
use ssm_lfi::Result;

#[derive(Parser)]
#[command(name = "ssm-lfi", version, about = "Likelihood-free inference for state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration with [run], [sweep] and [output] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// A single run of one method on one model.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "lmc-bnn")]
        method: Method,
        #[arg(long, default_value = "lg")]
        model: ModelKind,
        /// Simulations per time-step.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Every method × model × seed × budget of the configuration.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// LMC methods at every window length of [sweep].windows.
    SweepWindow {
        #[command(flatten)]
        common: Common,
    },
    /// Rejection ABC on one time-step of a ground-truth run.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "lg")]
        model: ModelKind,
        /// Time index of the observation to condition on.
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, default_value_t = 100_000)]
        proposals: usize,
        #[arg(long, default_value_t = 0.01)]
        retain: f64,
    },
}

fn load_config(common: &Common) -> Result<BenchConfig> {
    let mut config = match &common.config {
        Some(p) => BenchConfig::parse(&fs::read_to_string(p)?)?,
        None => BenchConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seeds = vec![s];
    }
    Ok(config)
}

fn finish(report: &BenchReport, out: &Path) -> Result<()> {
    write_outputs(report, out)?;
    info!(
        "{} runs, {} failed; results in {}",
        report.cells.len() + report.failures.len(),
        report.failures.len(),
        out.display()
    );
    for (k, e) in &report.failures {
        error!("{k:?}: {e}");
    }
    Ok(())
}

fn oracle(common: &Common, model: ModelKind, t: usize, proposals: usize, retain: f64) -> Result<()> {
    let config = load_config(common)?;
    let model = SsmModel::new(model);
    let seed = config.seeds[0];
    let truth = model.generate_ground_truth(config.horizon, seed)?;
    let obs = truth.observations.get(t.wrapping_sub(1)).ok_or_else(|| {
        ssm_lfi::Error::InvalidArgument(format!("t must lie in [1, {}]", config.horizon))
    })?;
    let abc = rejection_abc(&model, &summarize(obs)?, proposals, retain, seed)?;
    let mode = if abc.accepted.len() >= 2 {
        Some(kde_map_estimate(&abc.accepted)?)
    } else {
        None
    };

    fs::create_dir_all(&common.out)?;
    let dim = model.dim();
    let mut csv = String::new();
    for j in 0..dim {
        let _ = write!(csv, "theta{j},");
    }
    csv.push_str("discrepancy\n");
    for (a, d) in abc.accepted.iter().zip(&abc.discrepancies) {
        for v in a {
            let _ = write!(csv, "{v},");
        }
        let _ = writeln!(csv, "{d}");
    }
    fs::write(common.out.join("abc.csv"), csv)?;
    let line = json!({
        "kind": "oracle",
        "model": model.name(),
        "seed": seed,
        "t": t,
        "truth": truth.states[t - 1].values(),
        "proposals": proposals,
        "accepted": abc.accepted.len(),
        "threshold": abc.threshold,
        "mean": abc.mean(),
        "kde_mode": mode,
    });
    fs::write(common.out.join("run.log"), format!("{line}\n"))?;
    info!("{line}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            common,
            method,
            model,
            budget,
        } => {
            let mut config = load_config(&common)?;
            config.methods = vec![method];
            config.models = vec![model];
            config.seeds.truncate(1);
            if let Some(b) = budget {
                config.budgets = vec![b];
            }
            config.budgets.truncate(1);
            finish(&run_benchmark(&config, common.workers)?, &common.out)
        }
        Command::Bench { common } => {
            let config = load_config(&common)?;
            finish(&run_benchmark(&config, common.workers)?, &common.out)
        }
        Command::SweepWindow { common } => {
            let config = load_config(&common)?;
            finish(&moving_window_sweep(&config, common.workers)?, &common.out)
        }
        Command::Oracle {
            common,
            model,
            t,
            proposals,
            retain,
        } => oracle(&common, model, t, proposals, retain),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
