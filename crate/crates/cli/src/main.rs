use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use fama_cli::commands::{self, Baseline, DataSource, Estimator};
use fama_cli::config::{Profile, RunConfig};

#[derive(Parser)]
#[command(name = "fama", version, about = "Copula-aided fast FAMA experiments")]
struct Cli {
    /// TOML run configuration; omitted values come from the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset supplying defaults (overrides the file's `profile` key).
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Root seed (overrides the file's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated snapshots to a container.
    Simulate {
        #[arg(long)]
        count: usize,
    },
    /// Stage 1: fit the per-coordinate marginal flows.
    TrainMarginals {
        /// Stage-1 checkpoint to resume.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage 2: fit the attentional copula on frozen marginals.
    TrainCopula {
        /// Stage-1 checkpoint, or a stage-2 checkpoint to resume.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Posterior means, predicted ratios and port choices for masked snapshots.
    Impute {
        /// Stage-2 checkpoint.
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the exact posterior instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Snapshot container; when absent, snapshots are simulated.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Snapshots to simulate when no container is given.
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Observed ports; defaults to the container masks or the eval setting.
        #[arg(long)]
        observed_ports: Option<usize>,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Also write every posterior draw.
        #[arg(long)]
        dump_samples: bool,
    },
    /// Run the configured sweep.
    Evaluate {
        /// Stage-2 checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comparison estimators (repeatable).
        #[arg(long, value_enum)]
        baseline: Vec<Baseline>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = RunConfig::load(cli.config.as_deref(), cli.profile, cli.seed)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate { count } => {
            let p = commands::simulate(&cfg, out, count)?;
            println!("{}", p.display());
        }
        Command::TrainMarginals { checkpoint } => {
            let p = commands::train_marginals_cmd(&cfg, out, checkpoint.as_deref())?;
            println!("{}", p.display());
        }
        Command::TrainCopula { checkpoint } => {
            let p = commands::train_copula_cmd(&cfg, out, checkpoint.as_deref())?;
            println!("{}", p.display());
        }
        Command::Impute {
            checkpoint,
            oracle,
            data,
            count,
            observed_ports,
            samples,
            dump_samples,
        } => {
            let estimator = match (checkpoint, oracle) {
                (Some(p), false) => Estimator::Checkpoint(p),
                (None, true) => Estimator::Oracle,
                _ => bail!("impute needs either --checkpoint or --oracle"),
            };
            let data = match data {
                Some(p) => DataSource::Container(p),
                None => DataSource::Live(count),
            };
            let r = commands::impute(&cfg, out, &estimator, &data, observed_ports, samples, dump_samples)?;
            println!(
                "{} snapshots, NMSE r {:.4e} h {:.4e} I {:.4e}",
                r.snapshots.len(),
                r.nmse_r,
                r.nmse_h,
                r.nmse_i
            );
        }
        Command::Evaluate { checkpoint, baseline } => {
            let r = commands::evaluate(&cfg, out, checkpoint.as_deref(), &baseline)?;
            print!("{}", commands::sweep_table(&r));
        }
    }
    Ok(())
}
