use std::fmt;

use tdcr_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OTHER: u8 = 1;
    pub const BAD_ARGS: u8 = 2;
    pub const FILE: u8 = 3;
    pub const GENERATION: u8 = 4;
    pub const TRAINING: u8 = 5;
    pub const SCHEMA: u8 = 6;
    pub const BIND: u8 = 7;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }

    pub fn bad_args(msg: impl Into<String>) -> Self {
        Self::new(exit::BAD_ARGS, msg)
    }

    /// Errors from loading inputs: file problems map to 3, schema problems
    /// to 6, everything else to `fallback`.
    pub fn from_core(e: Error, fallback: u8) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) | Error::Toml(_) | Error::EmptyMesh => exit::FILE,
            Error::InvalidSpec(_) | Error::InvalidTask(_) => exit::FILE,
            Error::SchemaMismatch { .. } => exit::SCHEMA,
            _ => fallback,
        };
        Self::new(code, e.to_string())
    }

    pub fn file(e: Error) -> Self {
        Self::from_core(e, exit::FILE)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
