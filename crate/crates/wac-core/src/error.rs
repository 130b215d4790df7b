use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("insufficient history: requested {requested} rows, {available} available")]
    InsufficientHistory { requested: usize, available: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("nonpositive degree {value} at index {index}")]
    NonPositiveDegree { index: usize, value: f64 },
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("no oscillatory pole between {lo} and {hi} Hz")]
    NoModeInBand { lo: f64, hi: f64 },
    #[error("pair ({output},{input}) not present in model")]
    UnknownPair { output: usize, input: usize },
    #[error("machine {0} out of range")]
    UnknownMachine(usize),
    #[error("all residues vanish at the selected mode")]
    DegenerateResidues,
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
