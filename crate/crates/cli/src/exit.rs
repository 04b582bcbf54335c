//! Process exit codes by error class.

use std::fmt;

use surgiatm::Error;

pub const OTHER: u8 = 1;
pub const ARGUMENT: u8 = 2;
pub const PAIRING: u8 = 3;
pub const IO: u8 = 4;
pub const CHECK_FAILED: u8 = 5;

/// A verification command found a violation.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Exit code of the first classifiable error in the chain.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<CheckFailed>() {
            return CHECK_FAILED;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Argument(_) | Error::Shape(_) | Error::Domain(_) => ARGUMENT,
                Error::Pairing { .. } => PAIRING,
                Error::Io { .. } | Error::Format(_) => IO,
                Error::Estimation(_) | Error::Training { .. } => OTHER,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return IO;
        }
    }
    OTHER
}
