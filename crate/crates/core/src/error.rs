use std::io;

use thiserror::Error;

/// Errors raised anywhere in the decision pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("batch norm in train mode needs at least two samples per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("label row {row} is not a one-hot vector")]
    LabelFormat { row: usize },

    #[error("tape state: {0}")]
    TapeState(&'static str),

    #[error("optimizer state: {0}")]
    OptimizerState(String),

    #[error("non-finite value in {0}")]
    NumericDomain(&'static str),

    #[error("not enough data: {0}")]
    Size(String),

    #[error("invalid model spec: {0}")]
    Spec(String),

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            axis,
            expected,
            actual,
        })
    }
}
