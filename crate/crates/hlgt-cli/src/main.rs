//! `hlgt`: command-line front end for the lattice gauge theory library.
//!
//! Every computed quantity is written as one JSON line (or a CSV row with
//! `--csv`). Exit status is 0 on success, 2 when a verification fails and 1
//! on usage or computation errors.

mod argv;
mod commands;
mod record;

use std::io::Write;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use hlgt::Conventions;

use crate::commands::{Command, Ctx};
use crate::record::Record;

const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ZnCasimirArg {
    Laplacian,
    Quarter,
}

#[derive(Parser, Debug, Clone)]
#[command(name = "hlgt", version, about = "Hamiltonian lattice gauge theory on dyadic lattices")]
struct Cli {
    /// RNG seed, recorded in every output record.
    #[arg(long, global = true, default_value_t = 20240531)]
    seed: u64,
    /// Residual tolerance; overrides HLGT_TOLERANCE.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Write CSV instead of JSON lines.
    #[arg(long, global = true)]
    csv: bool,
    /// Casimir normalisation for Z_n.
    #[arg(long, global = true, value_enum, default_value = "laplacian")]
    zn_casimir: ZnCasimirArg,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    fn conventions(&self) -> Conventions {
        match self.zn_casimir {
            ZnCasimirArg::Laplacian => Conventions::default(),
            ZnCasimirArg::Quarter => Conventions::quarter_zn(),
        }
    }
}

fn tolerance(cli: &Cli) -> Result<f64> {
    if let Some(t) = cli.tolerance {
        return Ok(t);
    }
    match std::env::var("HLGT_TOLERANCE") {
        Ok(s) => s
            .trim()
            .parse()
            .with_context(|| format!("HLGT_TOLERANCE is not a number: '{s}'")),
        Err(_) => Ok(DEFAULT_TOLERANCE),
    }
}

fn run_one(cli: &Cli) -> Result<Vec<Record>> {
    let ctx = Ctx {
        seed: cli.seed,
        conv: cli.conventions(),
    };
    commands::run(&cli.command, &ctx)
}

fn parse(args: &[String]) -> std::result::Result<Cli, ExitCode> {
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();

    if let Some(path) = argv::take_flag(&mut args, "config") {
        match argv::read_config(&path) {
            Ok(entries) => args = argv::merge_config(args, &entries),
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        }
    }
    let sweep = match argv::take_flag(&mut args, "sweep").map(|s| argv::parse_sweep(&s)) {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let runs: Vec<Vec<String>> = match &sweep {
        Some(s) => argv::expand_sweep(&args, s),
        None => vec![args],
    };
    let clis = match runs.iter().map(|a| parse(a)).collect::<std::result::Result<Vec<_>, _>>() {
        Ok(c) => c,
        Err(code) => return code,
    };
    let tol = match tolerance(&clis[0]) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };

    // Sweep points run in parallel; collect keeps them in parameter order.
    let results: Vec<Result<Vec<Record>>> = clis.par_iter().map(run_one).collect();
    let mut records = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => records.append(&mut v),
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
        }
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let written = if clis[0].csv {
        out.write_all(record::to_csv(&records, tol).as_bytes())
    } else {
        records
            .iter()
            .try_for_each(|r| writeln!(out, "{}", r.to_json(tol)))
    };
    if written.and_then(|_| out.flush()).is_err() {
        return ExitCode::from(1);
    }

    if records.iter().all(|r| r.passes(tol)) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
