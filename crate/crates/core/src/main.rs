use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chainfl::harness::{self, HarnessError, SweepParam};

#[derive(Parser)]
#[command(name = "chainfl", version, about = "Blockchain-coordinated federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment for each value of one parameter, for both methods.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// n_collaborators or failures_count
        #[arg(long)]
        vary: String,
        /// Comma-separated list, e.g. 5,10,15,20
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a file against a hex SHA-256 digest.
    Verify {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        digest: String,
    },
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { config, out } => {
            let report = harness::cli_run(&config, &out)?;
            if let Some(m) = &report.final_metrics {
                println!(
                    "final accuracy {:.4}, weighted F1 {:.4}, total gas {}",
                    m.accuracy, m.weighted_f1, report.gas.total
                );
            }
            println!("reports written to {}", out.display());
        }
        Command::Sweep {
            config,
            vary,
            values,
            out,
        } => {
            let vary: SweepParam = vary.parse()?;
            let values = harness::parse_values(&values)?;
            let rows = harness::cli_sweep(&config, vary, &values, &out)?;
            println!("{} runs, summary in {}", rows.len(), out.join(harness::SUMMARY_CSV).display());
        }
        Command::Verify { weights, digest } => {
            let cid = harness::cli_verify(&weights, &digest)?;
            println!("ok {cid}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
