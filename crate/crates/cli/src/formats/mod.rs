//! On-disk artifact formats: log files, oracle worlds, pseudo-label files,
//! parameter checkpoints, and metric reports. All are UTF-8 text; floats
//! that must round-trip bit-exactly are stored as hex-encoded IEEE-754 bits,
//! human-facing floats use Rust's shortest round-trip formatting.

pub mod checkpoint;
pub mod logfile;
pub mod oracle;
pub mod pseudo;
pub mod report;

use crate::error::CliError;

pub(crate) fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub(crate) fn parse_hex_f64(s: &str, path: &str, line: usize) -> Result<f64, CliError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| CliError::Parse {
            path: path.to_string(),
            line,
            message: format!("bad hex float {s:?}"),
        })
}

pub(crate) fn parse_err(path: &str, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}
