//! `qclab`: solve Beltrami equations, run the truncation suite and removability sweeps.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qclab", version, about = "Numerical laboratory for planar quasiconformal maps")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config file with [grid], [solve], [lemma1] and [sweep] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Grid points per side.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Half-width of the square grid.
    #[arg(long = "L", global = true)]
    pub half_width: Option<f64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `$QCLAB_OUT/<command>`, then `qclab-out/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run on a single worker so every reduction happens in a fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the principal map of one coefficient.
    Solve {
        /// zero | constant-disk:k | radial:K | checkerboard:k[:cells]
        #[arg(long)]
        mu: Option<String>,
    },
    /// Convergence of truncated solutions (report.csv).
    Lemma1 {
        #[arg(long)]
        mu: Option<String>,
    },
    /// Removability sweep over (alpha, K, lambda) cells (report.csv, pairings.csv, plots).
    Sweep {
        /// Only print the critical-index table, e.g. `--indices alpha=0.5 K=3`.
        #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
        indices: Option<Vec<String>>,
    },
}

/// A failure reported on stderr as one `key=value` line and mapped to an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl Failure {
    pub fn config(kind: &str, message: String) -> Self {
        Self { code: 2, kind: kind.into(), message }
    }

    pub fn numerical(kind: &str, message: String) -> Self {
        Self { code: 3, kind: kind.into(), message }
    }
}

impl From<qclab::Error> for Failure {
    fn from(e: qclab::Error) -> Self {
        let code = if e.is_numerical() { 3 } else { 2 };
        Self { code, kind: e.kind().into(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error code={} kind={} message={:?}", f.code, f.kind, f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let threads = if cli.global.deterministic { Some(1) } else { cli.global.threads };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::config("invalid-parameter", "--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::config("threads", e.to_string()))?;
    }
    let file = config::read_config(cli.global.config.as_deref())?;
    match cli.command {
        Command::Solve { mu } => commands::solve(&cli.global, &file, mu.as_deref()),
        Command::Lemma1 { mu } => commands::lemma1(&cli.global, &file, mu.as_deref()),
        Command::Sweep { indices: Some(pairs) } => commands::indices(&pairs),
        Command::Sweep { indices: None } => commands::sweep(&cli.global, &file),
    }
}
