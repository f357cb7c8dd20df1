use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violates its documented domain (non-positive resistance, empty list, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A call sequence broke an API contract (time moving backwards, unbalanced trace calls).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The monitor already has a conversion in flight.
    #[error("monitor busy: conversion in flight until t = {until_ns} ns")]
    Busy { until_ns: u64 },

    /// The operation is not available in the monitor's current operating mode.
    #[error("wrong monitor mode: {0}")]
    Mode(String),

    /// Register address not present in the emulated register map.
    #[error("unknown register address 0x{0:02x}")]
    UnknownRegister(u8),

    /// Scenario or calibration file could not be parsed or validated.
    #[error("{0}")]
    Validation(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
