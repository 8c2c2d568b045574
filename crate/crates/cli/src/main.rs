use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fxtes::Execution;
use fxtes_cli::commands::{execute, Command, Options};

/// Newton-like fixed-time extremum seeking simulator.
#[derive(Debug, Parser)]
#[command(name = "fxtes", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// PRNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run independent trajectories on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Derived exponents and fixed-time bound.
    Params {
        #[arg(long)]
        q1: Option<f64>,
        #[arg(long)]
        q2: Option<f64>,
        #[arg(long)]
        k: Option<f64>,
        /// Target bound; sets the gain.
        #[arg(long = "t-star")]
        t_star: Option<f64>,
    },
    /// One closed-loop run with the resolved configuration.
    Simulate,
    /// Closed loop against the filtered Newton-ES baseline.
    Figure1,
    /// Hessian-inverse tracking.
    Hessian,
    /// Randomized starts.
    Montecarlo,
    /// Averaging, reduced-flow, boundary-layer and integrator oracles.
    Oracles,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Params { q1, q2, k, t_star } => Command::Params { q1, q2, k, t_star },
        Cmd::Simulate => Command::Simulate,
        Cmd::Figure1 => Command::Figure1,
        Cmd::Hessian => Command::Hessian,
        Cmd::Montecarlo => Command::Montecarlo,
        Cmd::Oracles => Command::Oracles,
    };
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        sets: cli.set,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };
    let start = Instant::now();
    match execute(&command, &opts) {
        Ok(outcome) => {
            if let Command::Params { .. } = command {
                let p = &outcome.report.params_used;
                println!("alpha1 = {}", p.alpha1());
                println!("alpha2 = {}", p.alpha2());
                println!("k = {}", p.k);
                println!("T* = {:.4}", p.t_star());
            }
            print!("{}", outcome.summary());
            eprintln!(
                "wall time: {:.2?}; outputs in {}",
                start.elapsed(),
                opts.out.display()
            );
            if outcome.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
