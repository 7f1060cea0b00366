//! Experiment pipeline behind the `bdseg` command-line tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod pool;

use bdseg_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// Short machine-readable class of the failure.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                Error::Parse { .. } => "parse",
                Error::Domain(_) => "domain",
                Error::Shape(_) => "shape",
                Error::Fit(_) => "fit",
                Error::Solve(_) => "solve",
                Error::NoBoundary => "no-boundary",
                Error::Numeric(_) => "numeric",
                Error::Io { .. } => "io",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "usage" => 2,
            "fit" | "solve" | "no-boundary" | "numeric" => 4,
            _ => 3,
        }
    }

    /// Single-line detail without the class prefix.
    pub fn detail(&self) -> String {
        let s = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => match e {
                Error::Parse { offset, detail } => format!("byte {offset}: {detail}"),
                Error::Domain(m) | Error::Shape(m) | Error::Fit(m) | Error::Solve(m) | Error::Numeric(m) => {
                    m.clone()
                }
                Error::NoBoundary => "no boundary pixel passed the decode threshold".into(),
                Error::Io { path, source } => format!("{path}: {source}"),
            },
        };
        s.replace('\n', " ")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
