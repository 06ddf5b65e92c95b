mod commands;
mod manifest;
mod scenario;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Formation control of camera airships around a ground subject.
#[derive(Debug, Parser)]
#[command(name = "airform", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario document (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Feasibility tables and closed-form reference orbits.
    Orbit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        orbit: OrbitArgs,
    },
    /// Long-horizon open-loop solve of one of the orbit studies.
    Solve {
        #[command(flatten)]
        common: Common,
        /// min-speed, slip-abeam, slip-compensated, pitch or spread; defaults to the scenario's study name.
        #[arg(long)]
        study: Option<String>,
    },
    /// One closed-loop episode.
    Sim {
        #[command(flatten)]
        common: Common,
    },
    /// Independent episodes over a parameter axis, aggregated into one table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Debug, Args, Clone)]
pub struct OrbitArgs {
    /// Orbit yaw rate [deg/s].
    #[arg(long, default_value_t = 6.0)]
    pub yaw_rate_deg: f64,
    /// Subject speed relative to the air [m/s].
    #[arg(long, default_value_t = 0.5)]
    pub subject_speed: f64,
    /// Base radius of the reference orbit [m].
    #[arg(long, default_value_t = 15.0)]
    pub radius: f64,
    /// Grid points per axis of the feasibility table.
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    /// Largest base radius in the table [m].
    #[arg(long, default_value_t = 40.0)]
    pub radius_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Wind,
    Airships,
    Seed,
    Subject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Formation sizes 1, 2, 3 and 6.
    Sizes,
    /// Seven wind speeds from calm to 3 m/s.
    Wind,
    /// Subject motion on and off, each with and without wind.
    Moving,
}

#[derive(Debug, Args, Clone)]
pub struct SweepArgs {
    #[arg(long, value_enum, conflicts_with = "preset", requires = "values")]
    pub axis: Option<Axis>,
    /// Comma-separated values along the axis.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Orbit { common, orbit } => commands::orbit(&common, &orbit, &args),
        Command::Solve { common, study } => commands::solve(&common, study.as_deref(), &args),
        Command::Sim { common } => commands::sim(&common, &args),
        Command::Sweep { common, sweep, threads } => commands::sweep(&common, &sweep, threads, &args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
