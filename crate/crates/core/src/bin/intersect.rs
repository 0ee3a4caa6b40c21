use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use intersect::dqn::{load_checkpoint, Network};
use intersect::harness::{self, RunConfig};

#[derive(Parser)]
#[command(name = "intersect", version, about = "Train and evaluate intersection-crossing policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes checkpoint.bin and curve.csv.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy evaluation of a checkpoint; writes metrics.csv and episodes.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One greedy episode; writes trace_<seed>.csv. `--seed` is the episode seed.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> intersect::Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }
}

fn load_network(path: &Path, cfg: &RunConfig) -> intersect::Result<Network> {
    load_checkpoint(&fs::read(path)?, &cfg.network)
}

fn run(cli: Cli) -> intersect::Result<()> {
    match cli.command {
        Command::Train { common } => {
            let mut cfg = common.load()?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let out = harness::train(&cfg, Some(&common.out))?;
            let m = &out.final_metrics;
            println!("success {:.4} collisions {} timeouts {}", m.success_rate, m.collisions, m.timeouts);
        }
        Command::Evaluate { common, checkpoint } => {
            let mut cfg = common.load()?;
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let net = load_network(&checkpoint, &cfg)?;
            let (m, _) = harness::evaluate(&cfg, &net, Some(&common.out))?;
            let ctr = m.ctr.map_or_else(|| "n/a".to_string(), |c| format!("{c:.4}"));
            println!(
                "success {:.4} collisions {} timeouts {} ctr {ctr} mean_reward {:.4}",
                m.success_rate, m.collisions, m.timeouts, m.mean_reward
            );
        }
        Command::Rollout { common, checkpoint } => {
            let cfg = common.load()?;
            let net = load_network(&checkpoint, &cfg)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let s = harness::rollout(&cfg, &net, seed, &common.out)?;
            println!("seed {seed}: {:?} after {} steps, reward {:.4}", s.outcome.kind, s.outcome.step_count, s.total_reward);
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
