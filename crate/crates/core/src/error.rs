use std::fmt;

use crate::sandwich::EstimatorKind;

/// Why Fisher scoring stopped without converging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// `max_iter` updates were taken without meeting the tolerances.
    IterationLimit,
    /// Every step-halving of a proposed update left some mean outside the family's range.
    StepHalvingExhausted,
    /// The summed information matrix could not be inverted.
    SingularInformation,
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureReason::IterationLimit => "iteration limit reached",
            FailureReason::StepHalvingExhausted => "step-halving budget exhausted",
            FailureReason::SingularInformation => "singular information matrix",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {what} (value {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("GEE did not converge after {iterations} iterations ({reason}); last beta = {beta:?}")]
    NonConvergence { iterations: usize, beta: Vec<f64>, reason: FailureReason },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{kind} correction is singular for cluster {cluster}")]
    CorrectionSingularity { cluster: usize, kind: EstimatorKind },

    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("standard error is zero")]
    DegenerateVariance,

    #[error("generator produced conditional mean {lambda} at position {position}")]
    GeneratorInvalid { position: usize, lambda: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("results file: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(what: &'static str, value: impl num_traits::ToPrimitive) -> Error {
    Error::Domain { what, value: value.to_f64().unwrap_or(f64::NAN) }
}
