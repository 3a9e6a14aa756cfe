use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("singular {what}")]
    Singular { what: String },
    #[error("grazing impact: |J_h . F-| = {0:e} below transversality threshold")]
    Grazing(f64),
    #[error("unknown contact point `{0}`")]
    UnknownContact(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid gait: {0}")]
    Gait(String),
    #[error("gait was built for model `{gait}` but model is `{model}`")]
    Mismatch { gait: String, model: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("orbit did not return to the guard within {0} s")]
    NonPeriodic(f64),
    #[error("unsupported schema version `{0}`")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Mismatch,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Singular { .. } | Error::Grazing(_) | Error::NonFinite(_) | Error::NonPeriodic(_) => {
                ErrorCategory::Numerical
            }
            Error::Mismatch { .. } | Error::Dimension { .. } => ErrorCategory::Mismatch,
            _ => ErrorCategory::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
