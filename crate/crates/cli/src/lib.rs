//! Library surface of the `dsn` command-line tool. The binary in `main.rs`
//! is a thin wrapper; tests drive these functions directly.

use std::fmt;

use dsn_core::DsnError;

pub mod ablation;
pub mod commands;
pub mod config;

/// CLI failure categories, each with its own exit code: config errors exit
/// 2, I/O and file-format errors exit 3, numeric failures exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DsnError> for CliError {
    fn from(e: DsnError) -> Self {
        match e {
            DsnError::Io(_)
            | DsnError::BadMagic { .. }
            | DsnError::UnsupportedVersion(_)
            | DsnError::BadModality(_)
            | DsnError::Truncated(_)
            | DsnError::TrailingData
            | DsnError::Malformed(_) => CliError::Io(e.to_string()),
            DsnError::InvalidConfig(_)
            | DsnError::Pairing(_)
            | DsnError::CountMismatch(_)
            | DsnError::LabelOutOfRange { .. }
            | DsnError::QueryCategoryMissing { .. }
            | DsnError::EmptyCategory(_)
            | DsnError::DimMismatch { .. } => CliError::Config(e.to_string()),
            DsnError::ZeroNorm(_)
            | DsnError::NonFiniteData(_)
            | DsnError::SvdNoConvergence(_)
            | DsnError::EmptyPositiveSet(_)
            | DsnError::TeacherRowNotNormalized { .. }
            | DsnError::NonFinite { .. }
            | DsnError::RankDeficient { .. } => CliError::Numeric(e.to_string()),
        }
    }
}
