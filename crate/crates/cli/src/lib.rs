//! Command implementations behind the `dpf` binary.

pub mod commands;
pub mod manifest;
pub mod verify;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;

/// Failure carrying the process exit code it maps to.
#[derive(Debug, Error)]
#[error("{msg}")]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, msg: msg.into() }
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, msg: msg.into() }
    }

    /// Output files that cannot be written share the parse/validation code.
    pub fn io(msg: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, msg: msg.into() }
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INFEASIBLE, msg: msg.into() }
    }

    pub fn incomplete(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INCOMPLETE, msg: msg.into() }
    }
}
