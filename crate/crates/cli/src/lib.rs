//! Command-line front end for the `ndde` solver: scenario files, CSV and
//! JSON output, and the check suites.

pub mod check;
pub mod output;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid scenario; the message names the offending key.
    #[error("{0}")]
    Parse(String),

    #[error("{0}")]
    NotStrictlyDelayed(String),

    /// Solver failure or unwritable output.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::NotStrictlyDelayed(_) => 3,
            CliError::Run(_) => 4,
        }
    }
}

impl From<ndde::Error> for CliError {
    fn from(e: ndde::Error) -> Self {
        match e {
            ndde::Error::NotStrictlyDelayed { .. } => CliError::NotStrictlyDelayed(e.to_string()),
            e => CliError::Run(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

/// Solver settings given on the command line or through the environment.
/// They take precedence over the scenario's `[solver]` table.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub grid_n: Option<usize>,
    pub t0: Option<f64>,
    pub tol: Option<f64>,
    pub parallel_columns: Option<bool>,
}
