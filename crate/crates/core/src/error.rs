use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not chain or do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A calling contract was violated (e.g. a non-scalar loss handed to `grad`).
    #[error("contract error: {0}")]
    Contract(String),
    /// A forward computation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    /// An iterative procedure diverged.
    #[error("divergence in {stage} at step {step}: {detail}")]
    Divergence {
        stage: String,
        step: usize,
        detail: String,
    },
    /// A least-squares system did not have full column rank.
    #[error("rank-deficient library: rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
    /// Affine re-expansion would need terms the library does not contain.
    #[error("terms outside the library: {0}")]
    LibraryOverflow(String),
}

pub type Result<T> = core::result::Result<T, Error>;

/// Failure of a long-running procedure together with the last finite state it reached.
#[derive(Debug, Clone)]
pub struct Diverged<T> {
    pub error: Error,
    pub partial: T,
}

impl<T> From<Diverged<T>> for Error {
    fn from(d: Diverged<T>) -> Self {
        d.error
    }
}

impl<T> core::fmt::Display for Diverged<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        self.error.fmt(f)
    }
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
