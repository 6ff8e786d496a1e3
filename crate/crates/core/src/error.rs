use std::io;

/// Errors produced anywhere in the hashing pipeline and its experiments.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {{
        // Negated so that NaN comparisons fail the check.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let failed = !$cond;
        if failed {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    }};
}
pub(crate) use ensure;
