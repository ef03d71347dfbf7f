use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transflow_cli::config::RunConfig;
use transflow_cli::output::emit_outputs;
use transflow_cli::runner::execute;
use transflow_cli::sweep::{run_sweep, sweep_status, SweepSpec};
use transflow_cli::CliError;

#[derive(Parser)]
#[command(name = "transflow", version, about = "Transport-constrained optical flow and optimal transport solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem described by a JSON config.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides io.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parameter sweep, e.g. `--sweep beta=1,0.1 delta=0,0.1`.
        #[arg(long, num_args = 1..)]
        sweep: Option<Vec<String>>,
    },
}

fn solve(config: PathBuf, out: Option<PathBuf>, sweep: Option<Vec<String>>) -> Result<i32, CliError> {
    let cfg = RunConfig::load(&config)?;
    let out = out.or_else(|| cfg.io.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if let Some(args) = sweep {
        let spec = SweepSpec::parse(&args, &cfg)?;
        let results = run_sweep(&cfg, &spec, &out)?;
        for r in &results {
            eprintln!(
                "beta {:e} delta {:e}: {:?}, {:.1} iterations per step (first three: {:.1})",
                r.beta, r.delta, r.status, r.average, r.average_first3
            );
        }
        return Ok(sweep_status(&results).exit_code());
    }
    let outcome = execute(&cfg)?;
    emit_outputs(&cfg, &outcome, &out)?;
    let r = &outcome.report;
    eprintln!(
        "{:?} after {} outer steps, {:.1} linear iterations per step",
        outcome.status,
        r.outer_iterations,
        r.average_iterations()
    );
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}");
    }
    Ok(outcome.status.exit_code())
}

fn main() -> ExitCode {
    // usage errors share the input-error exit code
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { transflow_cli::EXIT_INPUT as u8 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Solve { config, out, sweep } => solve(config, out, sweep).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            e.exit_code()
        }),
    };
    ExitCode::from(code as u8)
}
