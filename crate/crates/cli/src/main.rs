//! `driftopt`: collect, train, select, optimize and race from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CollectArgs, OptimizeArgs, RaceArgs, SelectArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "driftopt", version, about = "Learned drift-car dynamics, trajectory optimization and racing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags win over the config file, which wins over defaults.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file for this command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<command>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

impl Common {
    fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drive the simulator with random excitation and build the dataset.
    Collect(CollectArgs),
    /// Train a velocity model on a collected dataset.
    Train(TrainArgs),
    /// Loss comparison, architecture grid and smoothness reports.
    Select(SelectArgs),
    /// Optimize a scenario offline and replay it on the simulator.
    Optimize(OptimizeArgs),
    /// Receding-horizon laps around a track.
    Race(RaceArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Collect(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Select(a) => &a.common,
        Command::Optimize(a) => &a.common,
        Command::Race(a) => &a.common,
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Collect(a) => commands::collect(a),
        Command::Train(a) => commands::train(a),
        Command::Select(a) => commands::select(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Race(a) => commands::race(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
