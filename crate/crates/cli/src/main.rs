use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilevel_vi_cli::{execute, Invocation};

#[derive(Parser)]
#[command(name = "bilevel-vi", version, about = "Bilevel solver with a variational-inequality inner level")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path; overrides `output_path`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// No progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Outer loop; writes the per-iteration trace.
    Run,
    /// Error bounds at x0 for each T in T_range.
    Verify,
    /// One run per value of sweep_axis.
    Sweep,
    /// Lists the bundled instances.
    ListInstances,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let name = match cli.command {
        Command::Run => "run",
        Command::Verify => "verify",
        Command::Sweep => "sweep",
        Command::ListInstances => "list-instances",
    };
    let inv = Invocation {
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    ExitCode::from(execute(name, cli.config.as_deref(), &inv) as u8)
}
