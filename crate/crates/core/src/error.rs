use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layout: {0}")]
    Layout(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("singular matrix (pivot magnitude {0:e})")]
    Singular(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("format: {0}")]
    Format(String),
    #[error("fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    Fingerprint { expected: u64, found: u64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::NoConvergence(_) | Error::Divergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
