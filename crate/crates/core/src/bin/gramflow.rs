//! Batch front end: build transfer operators, compute gramians, rank
//! placements, synthesise controls, and certify stability from one config.
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use gramflow::cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the transfer operator and write it with a summary
    Build(Common),
    /// Finite- or infinite-horizon gramian of one set
    Gramian(Common),
    /// Score and rank candidate actuator or sensor regions
    Place(Common),
    /// Minimum-energy steering between two densities
    Control(Common),
    /// Time spent in one set by trajectories started in another
    Residence(Common),
    /// Occupation-time stability certificate
    Stability(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the seed in the configuration
    #[arg(short, long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Build(a) => (Command::Build, a),
        Cmd::Gramian(a) => (Command::Gramian, a),
        Cmd::Place(a) => (Command::Place, a),
        Cmd::Control(a) => (Command::Control, a),
        Cmd::Residence(a) => (Command::Residence, a),
        Cmd::Stability(a) => (Command::Stability, a),
    };
    match execute(command, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let infeasible = err.downcast_ref::<gramflow::Error>().is_some_and(|e| e.is_infeasible());
            ExitCode::from(if infeasible { 3 } else { 2 })
        }
    }
}

fn execute(command: Command, args: &Common) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let outcome = run(command, &cfg, args.seed, &args.out)?;
    let summary = serde_json::to_string(&outcome.summary).context("serialising summary")?;
    println!("{summary}");
    for f in &outcome.files {
        eprintln!("wrote {}", args.out.join(f).display());
    }
    Ok(())
}
