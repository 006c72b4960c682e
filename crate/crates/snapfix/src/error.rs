use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{format}: line {line}: {msg}")]
    Parse {
        format: &'static str,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Core(#[from] snapfix_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for this error: 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        use snapfix_core::Error as C;
        match self {
            Error::Core(C::Numerical(_) | C::Degenerate(_)) => 3,
            _ => 2,
        }
    }
}
