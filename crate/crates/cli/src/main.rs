//! `choreo4`: propagation, seeding, solving, family tracing and table
//! verification for near-collision orbits about the figure-eight choreography.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<choreo4::Error> for CliError {
    fn from(e: choreo4::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "choreo4",
    version,
    about = "Symmetric periodic orbits near collision with the figure-eight primaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Integrator tolerance (relative and absolute).
    #[arg(long, global = true, value_name = "X")]
    tol: Option<f64>,
    /// Table rows, `A-B` or `N`.
    #[arg(long, global = true, value_name = "A-B")]
    rows: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Interior samples of the symmetry check.
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,
    /// Chart used by `propagate`.
    #[arg(long, global = true, value_parser = ["cart", "reg"])]
    chart: Option<String>,
    /// Start from one table row.
    #[arg(long, global = true, value_name = "N")]
    row: Option<usize>,
    /// Start from a solution record file.
    #[arg(long, global = true, value_name = "PATH")]
    record: Option<PathBuf>,
    /// `propagate`: the primaries alone.
    #[arg(long, global = true)]
    choreography: bool,
    /// `trace`: start from the Kepler seed grid instead of table rows.
    #[arg(long, global = true)]
    discover: bool,
    /// `solve`: solve the periodic system and verify the orbit.
    #[arg(long, global = true)]
    periodic: bool,
    /// Any other configuration key, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a trajectory of the primaries and the test particle as CSV.
    Propagate,
    /// Build a regularized seed from a Kepler ellipse about body 1.
    Seed,
    /// Solve a boundary problem (or the periodic system) from a start.
    Solve,
    /// Trace family curves and refine their periodic orbits.
    Trace,
    /// Check the embedded or a user-supplied table of periodic orbits.
    VerifyTable {
        /// CSV with `index,tau0,u10,w20` lines.
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
    /// Print the constants of the problem.
    ExportConstants,
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::default();
    if let Some(path) = &cli.config {
        c.apply_file(path)?;
    }
    let flags: [(&str, Option<String>); 7] = [
        ("tol", cli.tol.map(|v| v.to_string())),
        ("rows", cli.rows.clone()),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("samples", cli.samples.map(|v| v.to_string())),
        ("chart", cli.chart.clone()),
        ("row", cli.row.map(|v| v.to_string())),
        (
            "record",
            cli.record.as_ref().map(|p| p.display().to_string()),
        ),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            c.set(k, &v)?;
        }
    }
    for (k, on) in [
        ("choreography", cli.choreography),
        ("discover", cli.discover),
        ("periodic", cli.periodic),
    ] {
        if on {
            c.set(k, "true")?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Command::VerifyTable { table: Some(t) } = &cli.command {
        c.table = Some(t.clone());
    }
    Ok(c)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::Propagate => commands::propagate(&cfg),
        Command::Seed => commands::seed(&cfg),
        Command::Solve => commands::solve(&cfg),
        Command::Trace => commands::trace(&cfg),
        Command::VerifyTable { .. } => commands::verify_table(&cfg),
        Command::ExportConstants => commands::export_constants(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
