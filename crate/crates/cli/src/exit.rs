//! Exit-code policy: distinct codes per failure class so CI can tell a
//! malformed config from a numerical blow-up.

use focal_core::Error;

pub const OK: i32 = 0;
pub const CONFIG: i32 = 2;
pub const IO: i32 = 3;
pub const NUMERIC: i32 = 4;
pub const TOLERANCE: i32 = 5;
pub const RESOURCE: i32 = 6;

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: CONFIG, message: message.into() }
    }

    pub fn tolerance(message: impl Into<String>) -> Self {
        Self { code: TOLERANCE, message: message.into() }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::InvalidSpec(_)
            | Error::InvalidInput(_)
            | Error::InvalidPolicy(_)
            | Error::Shape(_)
            | Error::Bounds(_)
            | Error::Json(_) => CONFIG,
            Error::Io(_) => IO,
            Error::Numeric(_) => NUMERIC,
            Error::Resource(_) => RESOURCE,
        };
        Self { code, message: err.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Self { code: IO, message: err.to_string() }
    }
}

pub type CmdResult = Result<(), Failure>;
