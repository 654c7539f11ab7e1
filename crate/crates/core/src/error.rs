use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shapes, geometry, alphabets).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The tape was asked about a node it never recorded.
    #[error("tape structure error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed on-disk data (anymap images, checkpoints, manifests, CSV).
    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("function is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
