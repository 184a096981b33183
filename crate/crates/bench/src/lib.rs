//! Validation, benchmark and golden-vector harness for `masked3d`.

pub mod alloc;
pub mod cli;
pub mod commands;
pub mod error;
pub mod report;
pub mod suites;

use std::io::Write;

pub use alloc::{measure_peak, PeakAlloc};
pub use cli::Cli;
pub use error::{BenchError, Result};
pub use report::BenchReport;

use cli::{Command, GoldenAction, GoldenArgs, OutputArg};
use report::{Format, ReportWriter};

pub fn cmd_golden(args: &GoldenArgs, out: &mut dyn Write) -> Result<usize> {
    let names = suites::suite_names(args.suite);
    let total = commands::with_threads(args.threads, || -> Result<Vec<(&str, usize)>> {
        names
            .iter()
            .map(|&s| {
                let n = match args.action {
                    GoldenAction::Generate => suites::generate(&args.path, s)?,
                    GoldenAction::Check => suites::check(&args.path, s)?,
                };
                Ok((s, n))
            })
            .collect()
    })??;
    let verb = match args.action {
        GoldenAction::Generate => "wrote",
        GoldenAction::Check => "matched",
    };
    for (s, n) in &total {
        writeln!(out, "{s}: {verb} {n} vectors")?;
    }
    Ok(total.iter().map(|(_, n)| n).sum())
}

/// Runs a parsed command line, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Validate(a) => commands::cmd_validate(a, out).map(|_| ()),
        Command::Bench(a) => {
            let format = match a.output {
                OutputArg::Jsonl => Format::Jsonl,
                OutputArg::Csv => Format::Csv,
            };
            let mut w = ReportWriter::new(out, format, a.validate);
            commands::cmd_bench(a, &mut w).map(|_| ())
        }
        Command::Golden(a) => cmd_golden(a, out).map(|_| ()),
    }
}
