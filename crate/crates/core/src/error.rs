use std::fmt;

use crate::tensor::DType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("gradients require 64-bit tensors, but this op ran at {0}")]
    Precision(DType),

    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("arch spec line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("spec validation failed:\n{0}")]
    Validation(Violations),

    #[error("weights file format error: {0}")]
    Format(String),

    #[error("weights do not match the model at `{path}`: {msg}")]
    WeightsMismatch { path: String, msg: String },

    #[error("latency csv line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("latency must be positive, got {0}")]
    Latency(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

/// One problem found while validating an architecture spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.msg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn push(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.0.push(Violation {
            path: path.into(),
            msg: msg.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.0.iter()
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}
