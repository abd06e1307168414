//! `mcpq`: solve planning problems, run the benchmarks and the oracle suite.
//!
//! Exit codes: 0 ok, 1 input error, 2 budget exhausted, 3 verification failure.

/// `println!` that tolerates a closed stdout (`mcpq ... | head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod options;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use options::Opts;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Input = 1,
    Budget = 2,
    Verification = 3,
}

#[derive(Parser)]
#[command(name = "mcpq", version, about = "Planning by probabilistic inference on MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a discrete or continuous problem; writes report.csv and policy.json.
    Solve,
    /// Run a benchmark or emit a benchmark problem as JSON.
    Bench {
        #[command(subcommand)]
        which: Bench,
    },
    /// Run the built-in oracle suite.
    Verify,
}

#[derive(Subcommand)]
enum Bench {
    /// EM on the double reward chain; writes chain_results.csv.
    Chain,
    /// EM on the two-link manipulator under a wall-clock budget; writes manipulator.csv.
    Manipulator,
    /// fb against q cost over horizons; writes scaling.csv.
    Scaling,
    EmitChain,
    EmitManipulator,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCPQ_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = cli.opts.resolve().and_then(|opts| match cli.command {
        Command::Solve => commands::solve(&opts),
        Command::Verify => commands::verify(&opts),
        Command::Bench { which } => match which {
            Bench::Chain => commands::bench_chain(&opts),
            Bench::Manipulator => commands::bench_manipulator(&opts),
            Bench::Scaling => commands::bench_scaling(&opts),
            Bench::EmitChain => commands::emit_chain(&opts),
            Bench::EmitManipulator => commands::emit_manipulator(&opts),
        },
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Exit::Input as u8)
        }
    }
}
