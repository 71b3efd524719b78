use bboard::cli::{execute, Cli};
use clap::Parser;

fn main() {
    std::process::exit(execute(Cli::parse()));
}
