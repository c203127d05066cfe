//! `spmoran` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use config::{load_config, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Incomplete(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Incomplete(_) => 3,
        }
    }
}

impl From<spmoran::Error> for CliError {
    fn from(e: spmoran::Error) -> Self {
        use spmoran::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::Capacity { .. } => CliError::Validation(msg),
            E::Regime(_) | E::Numeric(_) | E::SingularChain { .. } | E::Unreachable(_) => CliError::Numeric(msg),
            E::Diagnostics(_) | E::Censored { .. } => CliError::Incomplete(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spmoran", version, about = "Moran model on the sharp peak landscape")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Run {
    /// Flat JSON file of settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trajectories of the occupancy or full chain.
    Simulate(Run),
    /// Quasispecies weights as a function of a.
    QuasispeciesCurve(Run),
    /// Regime labels on an (a, alpha) grid.
    PhaseDiagram(Run),
    /// Conditioned birth and death chain of one class.
    BdAnalyze(Run),
    /// Discovery or persistence times.
    HittingTimes(Run),
    /// Renewal decomposition of a bounding chain.
    RenewalCheck(Run),
    /// Exact small-instance oracle checks.
    Verify(Run),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::QuasispeciesCurve(_) => "quasispecies-curve",
            Command::PhaseDiagram(_) => "phase-diagram",
            Command::BdAnalyze(_) => "bd-analyze",
            Command::HittingTimes(_) => "hitting-times",
            Command::RenewalCheck(_) => "renewal-check",
            Command::Verify(_) => "verify",
        }
    }

    fn run(&self) -> &Run {
        match self {
            Command::Simulate(r)
            | Command::QuasispeciesCurve(r)
            | Command::PhaseDiagram(r)
            | Command::BdAnalyze(r)
            | Command::HittingTimes(r)
            | Command::RenewalCheck(r)
            | Command::Verify(r) => r,
        }
    }
}

fn execute(cmd: &Command) -> Result<u8, CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let run = cmd.run();
    let file = match &run.config {
        Some(path) => load_config(path)?,
        None => Settings::default(),
    };
    let settings = file.overridden_by(&run.settings);

    if let Command::Verify(_) = cmd {
        let (report, table) = commands::verify()?;
        if settings.output.is_some() {
            let mut out = commands::sink(&settings)?;
            out.table("verify", &table)?;
            write_manifest(&mut out, cmd.name(), &settings, &report, started, clock)?;
        }
        return Ok(report.status);
    }

    let mut out = commands::sink(&settings)?;
    let report = match cmd {
        Command::Simulate(_) => commands::simulate(&settings, &mut out)?,
        Command::QuasispeciesCurve(_) => commands::quasispecies(&settings, &mut out)?,
        Command::PhaseDiagram(_) => commands::phase_diagram(&settings, &mut out)?,
        Command::BdAnalyze(_) => commands::bd_analyze(&settings, &mut out)?,
        Command::HittingTimes(_) => commands::hitting(&settings, &mut out)?,
        Command::RenewalCheck(_) => commands::renewal(&settings, &mut out)?,
        Command::Verify(_) => unreachable!("handled above"),
    };
    write_manifest(&mut out, cmd.name(), &settings, &report, started, clock)?;
    if let Some(msg) = &report.message {
        eprintln!("spmoran: {msg}");
    }
    eprintln!("spmoran: wrote {} files to {}", out.written.len(), out.dir.display());
    Ok(report.status)
}

fn write_manifest(
    out: &mut output::Sink,
    command: &str,
    settings: &Settings,
    report: &commands::Report,
    started: SystemTime,
    clock: Instant,
) -> Result<(), CliError> {
    let parameters = report.parameters.map(|p| {
        json!({
            "ell": p.ell, "m": p.m, "q": p.q, "a": p.a(), "alpha": p.alpha(),
            "sigma": p.sigma, "kappa": p.kappa, "K": p.k,
        })
    });
    let started_ms = started.duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
        "parameters": parameters,
        "config": report.config,
        "seed": settings.seed,
        "status": report.status,
        "message": report.message,
        "artifacts": out.written,
        "wall_clock": {"started_unix_ms": started_ms, "elapsed_seconds": clock.elapsed().as_secs_f64()},
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    out.raw("manifest.json", &bytes)
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
    match execute(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("spmoran {}: {e}", cli.command.name());
            ExitCode::from(e.code())
        }
    }
}
