use std::fmt;

use crate::payload::PayloadError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One violated configuration constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl Violation {
    pub fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    Config(Vec<Violation>),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("reproducibility violation: {0}")]
    Reproducibility(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("variant {requested} requested but only {available} variants exist per patch")]
    Exhausted { requested: usize, available: usize },

    #[error("count mismatch for class {class}: expected {expected} {what}, found {actual}")]
    CountMismatch {
        class: usize,
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error(transparent)]
    Payload(#[from] PayloadError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config(vec![Violation::new(field, message)])
    }

    pub(crate) fn shape(context: &'static str, expected: impl fmt::Debug, actual: impl fmt::Debug) -> Self {
        Error::Shape {
            context,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
