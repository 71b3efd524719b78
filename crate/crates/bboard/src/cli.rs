use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bboard_core::frontdoor::scenario::{run_scenario, ScenarioInput, DEFAULT_SEED};
use clap::{Args, Parser, Subcommand};

use crate::http::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "bboard", version, about = "Blackboard service selection engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load rules and services, play a scenario, write a report, optionally serve the HTTP API.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Rules file (`SUBTASK=..; PARAM=..; KIND=..; BORDER=..` per line).
    #[arg(long)]
    pub rules: PathBuf,
    /// Service descriptor file, one `[IP=.., PORT=.., ...]` record per line.
    #[arg(long)]
    pub services: PathBuf,
    /// Separate offers file, one `{PRO_ID=.., TASK_ID=.., IDX=.., ...}` per line.
    #[arg(long)]
    pub offers: Option<PathBuf>,
    /// Scenario file (TOML) with timeline and golden results.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Cross-check every result against brute-force enumeration.
    #[arg(long)]
    pub oracle: bool,
    /// Seed for simulated providers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// After the scenario, serve the HTTP API on this address.
    #[arg(long)]
    pub serve: Option<SocketAddr>,
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn load(args: &RunArgs) -> Result<ScenarioInput, String> {
    Ok(ScenarioInput {
        rules: read(&args.rules)?,
        services: read(&args.services)?,
        offers: args.offers.as_deref().map(read).transpose()?,
        scenario: args.scenario.as_deref().map(read).transpose()?,
        oracle: args.oracle,
        seed: args.seed,
    })
}

/// Runs the command and returns the process exit code: 0 on success, 1 on
/// a golden or oracle mismatch, 2 on unreadable or malformed input.
pub fn execute(cli: Cli) -> i32 {
    let Command::Run(args) = cli.command;
    let input = match load(&args) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let run = run_scenario(&input);
    match &args.report {
        Some(path) => {
            if let Err(e) = fs::write(path, &run.report) {
                eprintln!("error: {}: {e}", path.display());
                return 2;
            }
        }
        None => {
            let _ = std::io::stdout().write_all(run.report.as_bytes());
        }
    }
    if run.exit_code == 2 {
        eprint!("{}", run.report);
    }
    let (Some(addr), Some(engine)) = (args.serve, run.engine) else {
        return run.exit_code;
    };
    let state = AppState::new(engine, input.seed.unwrap_or(DEFAULT_SEED));
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    eprintln!("serving on http://{addr}");
    match rt.block_on(serve(addr, state)) {
        Ok(()) => run.exit_code,
        Err(e) => {
            eprintln!("error: {addr}: {e}");
            2
        }
    }
}
