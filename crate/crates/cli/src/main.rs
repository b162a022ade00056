use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpf_cli::commands::{cmd_compare, cmd_nminus1, cmd_trace, cmd_validate};
use dpf_cli::manifest::{RunArgs, RunPlan};
use dpf_cli::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "dpf", version, about = "Trace power-flow P-V curves with the dynamized power flow")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trace one P-V curve
    Trace(RunArgs),
    /// Loading limit under every single-branch outage
    Nminus1(RunArgs),
    /// Compare two curve CSV files
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the metrics JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a case and check its admittance matrix
    Validate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        direction: Option<String>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Command::Trace(args) => cmd_trace(&RunPlan::resolve(&args)?),
        Command::Nminus1(args) => cmd_nminus1(&RunPlan::resolve(&args)?),
        Command::Compare { a, b, out } => cmd_compare(&a, &b, out.as_deref()),
        Command::Validate { case, direction } => cmd_validate(&case, direction.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPF_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { EXIT_OK as u8 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
