use clap::{Parser, Subcommand};
use std::process::ExitCode;

mod commands;

/// Decides whether the set of finite trees generated by a nondeterministic
/// higher-order recursion scheme is finite, via a flag/marker intersection
/// type analysis cross-checkable by bounded enumeration.
#[derive(Parser)]
#[command(name = "lamyfin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide finiteness of the scheme's tree language.
    Check {
        /// Scheme file (see the README for the format).
        input: std::path::PathBuf,
        #[arg(long, default_value = "text", value_parser = ["text", "json", "dot"])]
        format: String,
        /// Instance-construction budget for the search.
        #[arg(long, default_value_t = 50_000_000)]
        budget: u64,
        /// Worker threads for the saturation rounds.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Print the witness derivation for infinite verdicts.
        #[arg(long, short = 'v', default_value_t = false)]
        verbose: bool,
    },
    /// Search for a typing derivation with a given target and minimum counter.
    Derive {
        input: std::path::PathBuf,
        /// Target full type, e.g. `(2,{},{0,1},o)`. Defaults to the
        /// finiteness target `(m,{},{0,..,m-1},o)`.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        min_counter: u64,
        #[arg(long, default_value = "text", value_parser = ["text", "json", "dot"])]
        format: String,
        #[arg(long, default_value_t = 50_000_000)]
        budget: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Enumerate language members up to a size bound (oracle).
    Enumerate {
        input: std::path::PathBuf,
        #[arg(long, default_value_t = 10)]
        max_size: u64,
        #[arg(long, default_value_t = 16)]
        depth_fuel: u64,
        #[arg(long, default_value_t = 10_000)]
        step_fuel: u64,
        #[arg(long, default_value = "text", value_parser = ["text", "json"])]
        format: String,
    },
    /// Expand a prefix of the Böhm tree (oracle).
    Bohm {
        input: std::path::PathBuf,
        #[arg(long, default_value_t = 8)]
        depth_fuel: u64,
        #[arg(long, default_value_t = 10_000)]
        step_fuel: u64,
        #[arg(long, default_value = "text", value_parser = ["text", "json"])]
        format: String,
    },
    /// Run the enumeration over a growth schedule and report max tree sizes.
    Growth {
        input: std::path::PathBuf,
        /// Schedule steps as `max_size:depth_fuel:step_fuel`, repeatable.
        #[arg(long = "step", required = true)]
        steps: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(2)
        }
    }
}
