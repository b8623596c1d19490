use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Dimensions or lengths of the inputs do not line up.
    #[error("structural error: {0}")]
    Shape(String),
    /// A NaN or infinity appeared; the payload names where.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Correlation of a constant (or otherwise degenerate) vector.
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    /// Rank-deficient regression design.
    #[error("collinear design: {0}")]
    Collinear(String),
    /// `FG` of a class whose initial accuracy is zero.
    #[error("forgetting undefined for class {0}: initial accuracy is zero")]
    UndefinedForgetting(usize),
    /// Reference gradient norm below the interference threshold.
    #[error("degenerate reference gradient (norm {0:e})")]
    DegenerateGradient(f64),
}

impl Error {
    /// Whether the error stems from numerics rather than from the inputs'
    /// structure or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::UndefinedCorrelation(_) | Error::Collinear(_) | Error::DegenerateGradient(_)
        )
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use shape_err;
