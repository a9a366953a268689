use thiserror::Error;

/// Errors raised by the numerical routines and the experiment driver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HdbError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("riccati segment [{t_lo}, {t_hi}] invalid: {reason}")]
    RiccatiInvalid {
        t_lo: f64,
        t_hi: f64,
        reason: String,
    },

    #[error("riccati piece {index} invalid: {source}")]
    RiccatiPiece {
        index: usize,
        #[source]
        source: Box<HdbError>,
    },

    #[error(
        "branch cut crossed in complex logarithm on [{t_lo}, {t_hi}] (imaginary jump {jump:.3})"
    )]
    BranchCut { t_lo: f64, t_hi: f64, jump: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("no root bracket in [{lo:e}, {hi:e}] (residuals {f_lo:e}, {f_hi:e})")]
    NoBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl HdbError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        HdbError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        HdbError::NonFinite {
            context: context.into(),
        }
    }

    /// True for failures caused by input validation rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HdbError::InvalidParameter { .. } | HdbError::Config(_) | HdbError::Unsupported(_)
        )
    }
}

impl From<std::io::Error> for HdbError {
    fn from(e: std::io::Error) -> Self {
        HdbError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HdbError>;
