//! Command-line front end: argument parsing, dispatch to the library
//! operations, and canonical JSON run reports.
//!
//! Exit codes: 0 on success, 2 on usage or validation errors, 3 on numeric
//! failures (non-finite values, divergence, failed verification).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

pub mod args;
pub mod commands;
pub mod report;

pub use args::{Cli, Command};
pub use report::{RunReport, Status, SCHEMA, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] qvec_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<CliError>,
    },
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(CliError) -> CliError {
        move |e| CliError::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Stage { source, .. } => source.exit_code(),
            _ => EXIT_VALIDATION,
        }
    }
}

/// Result of one invocation. `report` is absent when arguments did not
/// parse.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Option<RunReport>,
}

/// Parses `argv` (program name first), runs the command, and writes the
/// report to `--report` or standard output.
pub fn dispatch<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return Outcome { code, report: None };
        }
    };
    let name = cli.command.name();
    let report_path = cli.command.report_path().map(Path::to_path_buf);
    let (code, report) = match commands::run(&cli.command) {
        Ok(r) => {
            let code = if r.status == Status::Ok {
                EXIT_OK
            } else {
                EXIT_NUMERIC
            };
            (code, r)
        }
        Err(e) => {
            eprintln!("error: {e}");
            (e.exit_code(), RunReport::failed(name, &e))
        }
    };
    let mut json = report.to_canonical_json();
    json.push('\n');
    match &report_path {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &json) {
                eprintln!("error: cannot write report {}: {e}", p.display());
                return Outcome {
                    code: EXIT_VALIDATION,
                    report: Some(report),
                };
            }
        }
        None => print!("{json}"),
    }
    Outcome {
        code,
        report: Some(report),
    }
}
