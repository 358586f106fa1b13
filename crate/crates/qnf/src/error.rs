//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building bases, operators,
/// expansions, or model files.
#[derive(Debug, Error)]
pub enum Error {
    #[error("diagonal is empty")]
    EmptyDiagonal,

    #[error("non-finite value in {context} at index {index}: {value}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid tolerance {value}: must be finite and non-negative")]
    InvalidTolerance { value: f64 },

    #[error(
        "ambiguous degeneracy chain over sorted diagonal entries {first}..={last}: \
         adjacent gaps are within tolerance {tolerance:e} but the total spread {spread:e} exceeds it"
    )]
    AmbiguousDegeneracy {
        first: usize,
        last: usize,
        spread: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch in {context}: {expected}x{expected} expected, got {found}x{found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix in {context} is not square: {rows}x{cols}")]
    NotSquare {
        context: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error(
        "operator in {context} is not Hermitian: defect {defect:e} exceeds tolerance {tolerance:e}"
    )]
    NotHermitian {
        context: String,
        defect: f64,
        tolerance: f64,
    },

    #[error("hbar must be positive and finite, got {value}")]
    InvalidHbar { value: f64 },

    #[error("series has no coefficients")]
    EmptySeries,

    #[error("leading coefficient must be diagonal: nonzero entry at ({row}, {col})")]
    H0NotDiagonal { row: usize, col: usize },

    #[error("expansion order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("level index {level} out of range: basis has {count} levels")]
    LevelOutOfRange { level: usize, count: usize },

    #[error(
        "diagonal entry {index} ({diagonal}) disagrees with its level energy {level_energy} \
         beyond tolerance {tolerance:e}"
    )]
    BasisMismatch {
        index: usize,
        diagonal: f64,
        level_energy: f64,
        tolerance: f64,
    },

    #[error("gauge term at order {order} is not block diagonal: off-block norm {defect:e}")]
    GaugeNotBlockDiagonal { order: usize, defect: f64 },

    #[error("gauge order {order} out of range 1..={max}")]
    GaugeOrderOutOfRange { order: usize, max: usize },

    #[error("duplicate gauge term at order {order}")]
    GaugeDuplicate { order: usize },

    #[error("{context}: need at least {needed} data points, got {found}")]
    InsufficientData {
        context: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("{context}: length mismatch, {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("epsilon grid entry {index} is {value}: entries must be positive and finite")]
    InvalidEpsilon { index: usize, value: f64 },

    #[error("model field `{field}`: {detail}")]
    ModelField { field: String, detail: String },

    #[error("failed to parse model: {0}")]
    ModelParse(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
