//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants are deliberately fine-grained so callers
/// (and the CLI's exit-code mapping) can tell configuration mistakes, file
/// problems, and numeric failures apart.
#[derive(Debug, Error)]
pub enum DsnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite values in {0}")]
    NonFiniteData(&'static str),

    #[error("svd did not converge within {0} sweeps")]
    SvdNoConvergence(usize),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),

    #[error("invalid modality byte {0}")]
    BadModality(u8),

    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),

    #[error("trailing bytes after end of payload")]
    TrailingData,

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("malformed text record: {0}")]
    Malformed(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("teacher row {row} sums to {sum}, expected 1")]
    TeacherRowNotNormalized { row: usize, sum: f64 },

    #[error("contrastive anchor {0} has no positive in the batch")]
    EmptyPositiveSet(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("category pairing violation: {0}")]
    Pairing(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("rank-deficient features: only {rank} usable components for {bits} bits")]
    RankDeficient { rank: usize, bits: usize },

    #[error("query {query} has category {category} absent from the gallery")]
    QueryCategoryMissing { query: usize, category: u32 },

    #[error("category {0} has no samples")]
    EmptyCategory(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DsnError>;
