use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use stackelberg_core::harness::{
    barrier_gap_sweep, compare_schedules, run, trajectory_csv, write_outputs, Prepared, RunConfig,
};

/// Distributed Stackelberg equilibrium seeking over networked leaders.
#[derive(Parser)]
#[command(name = "stackelberg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the algorithm and write trajectory.csv, theory.json and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the diminishing and constant schedules side by side.
    CompareSchedules {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write both trajectories as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare barrier solutions with constrained best responses.
    BarrierSweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated barrier weights.
        #[arg(long, value_delimiter = ',', required = true)]
        theta: Vec<f64>,
    },
    /// Print the theoretical diagnostics of a configuration.
    Theory {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            let result = run(&cfg)?;
            write_outputs(&dir, &result)?;
            let last = result.trajectory.rows.last();
            println!(
                "{} outer iterations, stop: {}, final |psi_hat| = {}, audit compliant: {}",
                result.trajectory.rows.len(),
                serde_json::to_string(&result.trajectory.stop)?,
                last.map_or(f64::NAN, |r| r.psi_norm),
                result.audit.compliant()
            );
            if let Some(e) = last.and_then(|r| r.rel_x_err) {
                println!("relative distance to equilibrium: {e:e}");
            }
            log::info!("wrote outputs to {}", dir.display());
            println!("outputs in {}", dir.display());
        }
        Command::CompareSchedules { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let cmp = compare_schedules(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&cmp.hits)?);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("diminishing.csv"), trajectory_csv(&cmp.diminishing))?;
                std::fs::write(dir.join("constant.csv"), trajectory_csv(&cmp.constant))?;
            }
        }
        Command::BarrierSweep { config, theta } => {
            let cfg = load(&config, None)?;
            let rows = barrier_gap_sweep(&cfg, &theta)?;
            println!("theta,gap,max_leader_gap,bound,within_bound");
            for r in &rows {
                println!("{},{},{},{},{}", r.theta, r.gap, r.max_leader_gap, r.bound, r.within_bound);
            }
            if rows.iter().any(|r| !r.within_bound) {
                bail!("a cost gap exceeds its bound");
            }
        }
        Command::Theory { config } => {
            let cfg = load(&config, None)?;
            let prepared = Prepared::new(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&prepared.theory()?)?);
        }
    }
    Ok(())
}
