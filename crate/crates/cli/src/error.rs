use std::fmt;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self { code: EXIT_MISMATCH, message: message.into() }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self { code: EXIT_FAILURE, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ffgt::Error> for CliError {
    fn from(e: ffgt::Error) -> Self {
        let code = match e {
            ffgt::Error::Config(_) => EXIT_USAGE,
            ffgt::Error::Io(_) | ffgt::Error::Parse(_) | ffgt::Error::Input(_) => EXIT_IO,
            ffgt::Error::Divergence { .. } | ffgt::Error::Invariant(_) => EXIT_FAILURE,
        };
        Self { code, message: e.to_string() }
    }
}
