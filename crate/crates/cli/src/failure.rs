//! Exit-code classification.

use std::fmt;

use sgdlab::Error;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A run stopped on a non-finite value; artifacts written so far are kept.
#[derive(Debug)]
pub struct NumericAbort(pub String);

impl fmt::Display for NumericAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericAbort {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return EXIT_CONFIG;
        }
        if cause.is::<NumericAbort>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NumericOverflow { .. }
                | Error::SingularSystem(_)
                | Error::AllTrialsAborted(_) => EXIT_NUMERIC,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_FAILURE
}
