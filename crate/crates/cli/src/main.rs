use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dat_cli::{cmd_compare, cmd_run, cmd_sweep, cmd_validate, threads_from_env, CliError};

#[derive(Parser)]
#[command(
    name = "dat",
    version,
    about = "Distributed average tracking scenarios: validate, run, compare, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against every modelling assumption.
    Validate { file: PathBuf },
    /// Simulate the primary variant and write trajectory, report and manifest.
    Run {
        file: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Dotted-path override, e.g. `gains.beta=0.2`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run every entry of `variants` on identical initial conditions.
    Compare {
        file: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// One run per value of an override key; parallelism capped by DAT_THREADS.
    Sweep {
        file: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { file } => {
            let violations = cmd_validate(&file)?;
            if violations.is_empty() {
                println!("OK");
                Ok(())
            } else {
                Err(CliError::Invalid(violations))
            }
        }
        Command::Run { file, out, set } => {
            let m = cmd_run(&file, &out, &set)?;
            println!("status: {}", m.status);
            println!("digest: {}", m.digest);
            for p in &m.outputs {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Compare { file, out } => {
            let rep = cmd_compare(&file, &out)?;
            println!(
                "{:<16} {:>12} {:>14} {:>14} {:>12} {:>9}",
                "label", "status", "track_err", "consensus_err", "input_tv", "tv_ratio"
            );
            for r in &rep.rows {
                println!(
                    "{:<16} {:>12} {:>14.6e} {:>14.6e} {:>12.4} {:>9.4}",
                    r.label,
                    r.status.to_string(),
                    r.final_tracking_error,
                    r.final_consensus_error,
                    r.total_variation,
                    r.tv_ratio
                );
            }
            Ok(())
        }
        Command::Sweep {
            file,
            param,
            values,
            out,
        } => {
            let threads = threads_from_env()?;
            let rows = cmd_sweep(&file, &param, &values, &out, threads)?;
            println!(
                "{:<16} {:>12} {:>14} {:>14}",
                "value", "status", "track_err", "consensus_err"
            );
            for r in &rows {
                println!(
                    "{:<16} {:>12} {:>14.6e} {:>14.6e}",
                    r.value,
                    r.status,
                    r.final_tracking_error.unwrap_or(f64::NAN),
                    r.final_consensus_error.unwrap_or(f64::NAN)
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
