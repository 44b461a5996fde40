use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("non-finite loss during {0}")]
    NonFiniteLoss(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("buffer is empty: {0}")]
    EmptyBuffer(&'static str),

    #[error("ensemble has not been trained yet")]
    UntrainedEnsemble,

    #[error("ensemble member {index} out of range (ensemble size {size})")]
    MemberOutOfRange { index: usize, size: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
