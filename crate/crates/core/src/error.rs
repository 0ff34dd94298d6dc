use std::fmt;

use thiserror::Error;

/// Column block of the design `[1 | x | w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Intercept,
    Treatment,
    Controls,
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Block::Intercept => "intercept",
            Block::Treatment => "x",
            Block::Controls => "w",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design is rank deficient: column {column} of block `{block}` is numerically dependent on earlier columns")]
    RankDeficient { block: Block, column: usize },

    #[error("matrix is not positive definite: leading minor of order {minor} is not positive")]
    NotPositiveDefinite { minor: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("estimator undefined: {0}")]
    Undefined(String),

    #[error("{failed} of {reps} replications failed, above the 1% abort threshold")]
    TooManyFailures { failed: usize, reps: usize },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
