use std::fmt;

/// Process exit status with the error that caused it.
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

pub const RUNTIME: i32 = 1;
pub const USAGE: i32 = 2;
pub const CONNECTIVITY: i32 = 3;

pub fn usage(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: USAGE,
        error: e.into(),
    }
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: RUNTIME,
        error: e.into(),
    }
}

pub fn connectivity(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: CONNECTIVITY,
        error: e.into(),
    }
}

impl fmt::Debug for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit {}: {:#}", self.code, self.error)
    }
}
