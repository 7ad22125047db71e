//! `expforge`: exponents, regions, simulations and validation from the
//! command line.
//!
//! Exit status: 0 success, 1 usage or domain error, 2 validation failure.

mod commands;
mod manifest;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use commands::Output;
use manifest::{CommandKind, Format, Globals, Manifest, Overrides};
use std::io::Write;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "expforge", version, about = "Error exponents and simulations for AWGN channels with noisy feedback")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// One-way error exponent, optimized over s unless --s is given
    Exponent(Overrides),
    /// Pareto frontier of a two-way exponent region
    Region(Overrides),
    /// Monte Carlo error statistics next to analytic exponent and bounds
    Simulate(Overrides),
    /// Simulate over several block lengths and fit the exponent
    Sweep(Overrides),
    /// Run the acceptance criteria
    Validate(Overrides),
}

enum Status {
    Ok,
    ValidationFailed,
}

fn emit(out: &Output, man: &Manifest) -> Result<()> {
    let bytes = match man.format(out.default_format) {
        Format::Json => {
            let mut b = serde_json::to_vec_pretty(&out.json)?;
            b.push(b'\n');
            b
        }
        Format::Csv => out.csv.clone().context("this command has no CSV form")?,
    };
    match &man.output.path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(&bytes)?),
    }
}

fn validate(man: &Manifest, seed: Option<u64>) -> Result<Status> {
    let tol = match commands::tolerances() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("validation aborted: {msg}");
            return Ok(Status::ValidationFailed);
        }
    };
    let ids = commands::criteria(man)?;
    let opts = commands::validate_opts(man, seed)?;
    // a structured report on stdout replaces the human-readable lines
    let quiet = man.output.path.is_none() && man.output.format.is_some();
    let mut reports = Vec::new();
    for id in ids {
        let r = match expforge::validate::judge(id, &opts, &tol) {
            Ok(r) => r,
            Err(e) => expforge::validate::CriterionReport {
                id,
                name: expforge::validate::CRITERIA[id as usize - 1].1,
                passed: false,
                detail: format!("error: {e}"),
                seconds: 0.0,
            },
        };
        if !quiet {
            println!("{r}");
        }
        reports.push(r);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if man.output.path.is_some() || quiet {
        emit(&commands::validate_output(&reports, &tol, &opts)?, man)?;
    }
    if failed > 0 {
        eprintln!("{failed} of {} criteria failed", reports.len());
        return Ok(Status::ValidationFailed);
    }
    Ok(Status::Ok)
}

fn run(cli: Cli) -> Result<Status> {
    let g = &cli.globals;
    let mut man = match &g.config {
        Some(p) => Manifest::load(p)?,
        None => Manifest::default(),
    };
    let (kind, over) = match cli.command {
        Some(Cmd::Exponent(o)) => (CommandKind::Exponent, o),
        Some(Cmd::Region(o)) => (CommandKind::Region, o),
        Some(Cmd::Simulate(o)) => (CommandKind::Simulate, o),
        Some(Cmd::Sweep(o)) => (CommandKind::Sweep, o),
        Some(Cmd::Validate(o)) => (CommandKind::Validate, o),
        None => (
            man.command.context("no subcommand given and the manifest has no `command`")?,
            Overrides::default(),
        ),
    };
    man.apply(&over, g);
    let out = match kind {
        CommandKind::Exponent => commands::exponent(&man)?,
        CommandKind::Region => commands::region(&man)?,
        CommandKind::Simulate => commands::simulate(&man, g.seed)?,
        CommandKind::Sweep => commands::sweep(&man, g.seed)?,
        CommandKind::Validate => return validate(&man, g.seed),
    };
    emit(&out, &man)?;
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ValidationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
