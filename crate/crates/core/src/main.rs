use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use bepo::config::{parse_config, Experiment, RunConfig};
use bepo::experiments;

/// Output directory override; the only setting read from the environment.
const OUT_ENV: &str = "BEPO_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Solve,
    Simulate,
    CrossingSweep,
    ServiceabilitySweep,
    Convergence,
    CrossValidate,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Solve => Experiment::Solve,
            Command::Simulate => Experiment::Simulate,
            Command::CrossingSweep => Experiment::CrossingSweep,
            Command::ServiceabilitySweep => Experiment::ServiceabilitySweep,
            Command::Convergence => Experiment::Convergence,
            Command::CrossValidate => Experiment::CrossValidate,
        }
    }
}

/// Invariant-measure statistics of the bilinear elasto-plastic oscillator
/// by resolvent PDE solve and Monte Carlo simulation.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Experiment to run; overrides `experiment` in the config.
    #[arg(value_enum)]
    experiment: Command,
    /// TOML configuration; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: config `output_dir`, or $BEPO_OUTPUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel solves and paths.
    #[arg(long)]
    threads: Option<usize>,
    /// Simulation seed; overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(cli: &Cli) -> bepo::Result<RunConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    cfg.experiment = cli.experiment.into();
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    } else if let Some(out) = std::env::var_os(OUT_ENV) {
        cfg.output_dir = PathBuf::from(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::error!("cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    match experiments::run(&cfg, &cfg.output_dir) {
        Ok(m) => {
            log::info!(
                "{} finished in {:.1} s; outputs in {}",
                cfg.experiment.name(),
                m.wall_clock_seconds,
                cfg.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
