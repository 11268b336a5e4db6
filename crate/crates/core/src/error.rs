use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid protocol parameters: {0}")]
    InvalidParams(String),

    #[error("interval index {index} out of range (intervals per day: {per_day})")]
    IntervalOutOfRange { index: u32, per_day: u32 },

    #[error("absolute interval count overflows 32 bits (day {day}, interval {index})")]
    IntervalOverflow { day: u32, index: u32 },

    #[error("rpi pair is {gap} intervals apart, expected {expected}")]
    StepMismatch { gap: i64, expected: u32 },

    #[error("prefix length {0} outside 4..=64 bits")]
    PrefixBits(u32),

    #[error("bucket uses {got} prefix bits, store is configured for {expected}")]
    PrefixMismatch { got: u8, expected: u8 },

    #[error("identifier stored under prefix {stored:#x} but hashes to {actual:#x}")]
    MisfiledIdentifier { stored: u64, actual: u64 },

    #[error("capacity exceeded: {what} holds {len}, limit is {limit}")]
    Capacity { what: &'static str, len: usize, limit: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed message: {0}")]
    Wire(String),

    #[error("invalid group element")]
    InvalidGroupElement,

    #[error("randomness source failed: {0}")]
    Randomness(#[from] rand::Error),

    #[error("unauthorized upload")]
    Unauthorized,

    #[error("endpoint disabled: {0}")]
    Disabled(&'static str),

    #[error("transport failure (retryable: {retryable}): {message}")]
    Transport { retryable: bool, message: String },

    #[error("corrupt store log: {0}")]
    CorruptLog(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { retryable: true, .. })
    }
}
