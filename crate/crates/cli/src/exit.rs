//! Process exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | run finished but is not valid, or another failure |
//! | 2 | benchmark, lab or study specification error |
//! | 3 | agent failure |
//! | 4 | server unreachable |
//! | 5 | authentication refused |

use std::fmt;
use std::process::ExitCode;

use autolab_server::ClientError;

pub const OK: u8 = 0;
pub const FAILURE: u8 = 1;
pub const SPEC: u8 = 2;
pub const AGENT: u8 = 3;
pub const NETWORK: u8 = 4;
pub const AUTH: u8 = 5;

/// An error on its way to becoming an exit code.
#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub message: String,
}

impl Fail {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn spec(message: impl fmt::Display) -> Self {
        Self::new(SPEC, message.to_string())
    }

    pub fn other(message: impl fmt::Display) -> Self {
        Self::new(FAILURE, message.to_string())
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ClientError> for Fail {
    fn from(e: ClientError) -> Self {
        let code = match &e {
            ClientError::Network(_) => NETWORK,
            ClientError::Auth { .. } => AUTH,
            ClientError::Http { status: 404 | 422, .. } => SPEC,
            _ => FAILURE,
        };
        Fail::new(code, e.to_string())
    }
}

/// Prints the error, if any, and converts to a process exit code.
pub fn finish(result: Result<u8, Fail>) -> ExitCode {
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
