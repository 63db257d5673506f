use thiserror::Error;

use crate::model_io::LoadError;

/// Errors raised by the inference engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or configuration values that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A kernel produced NaN or infinity.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Load(#[from] LoadError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(format!($($arg)*))
    };
}
pub(crate) use config_err;
