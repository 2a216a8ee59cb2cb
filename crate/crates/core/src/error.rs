// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;
use core::fmt;

/// Errors produced by the editing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands had incompatible shapes.
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// An entry was outside the domain of an operation (e.g. `log` of a non-positive value).
    Domain { op: &'static str, value: f64 },
    /// A caller broke a documented contract (non-scalar backward root, double backward, ...).
    Contract(String),
    /// Invalid argument or configuration value.
    Argument(String),
    /// A problem has no feasible solution (e.g. fewer frames than tokens for alignment).
    Infeasible(String),
    /// Training produced a non-finite loss.
    Training { stage: &'static str, epoch: usize },
    /// An edit produced a non-finite gradient.
    Edit { iteration: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => write!(
                f,
                "{op}: dimension mismatch between {}x{} and {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::Domain { op, value } => write!(f, "{op}: value {value} outside domain"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::Training { stage, epoch } => {
                write!(f, "{stage} training diverged at epoch {epoch}")
            }
            Error::Edit { iteration } => {
                write!(
                    f,
                    "non-finite gradient during edit at iteration {iteration}"
                )
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
