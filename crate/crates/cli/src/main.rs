use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tecoord_cli::{run, RunArgs, Status};

#[derive(Parser)]
#[command(name = "tecoord", version, about = "Transactive DER coordination: simulation, aggregate models and MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the population under its scenario's base prices.
    Simulate(Common),
    /// Identify bin transition models, optionally reporting their fit.
    Identify(Common),
    /// Eigenvalues of fixed-price or post-reset models.
    Spectrum(Common),
    /// Solve the open-loop price schedule.
    Mpc(Common),
    /// Closed-loop evaluation of one or more cases with a metrics table.
    Validate(Common),
    /// Repeat a command over the values of one configuration key.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file; repeat for validate.
    #[arg(long = "scenario", required = true)]
    scenarios: Vec<PathBuf>,
    /// Saved transition model to use instead of identifying one.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replaces scenario.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. --set mpc.b_max=0.25.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Drop the wall-clock limit and timing outputs so reruns are identical.
    #[arg(long)]
    deterministic: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, c) = match cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Identify(c) => ("identify", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::Mpc(c) => ("mpc", c),
        Command::Validate(c) => ("validate", c),
        Command::Sweep(c) => ("sweep", c),
    };
    let args = RunArgs {
        scenarios: c.scenarios,
        models: c.models,
        out: c.out,
        seed: c.seed,
        overrides: c.overrides,
        deterministic: c.deterministic,
    };
    match run(name, &args) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::BudgetExhausted(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
