use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("spreading factor {0} outside the supported range 4..=12")]
    InvalidSpreadingFactor(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("buffer contains non-finite samples")]
    NonFinite,
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("length mismatch: expected {expected} samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("cyclic shift {shift} out of range for {len} slots")]
    ShiftOutOfRange { shift: usize, len: usize },
    #[error("offset out of range: {0}")]
    OffsetOutOfRange(String),
    #[error("no packet detected")]
    NoPacket,
    #[error("buffer truncated: payload needs {needed} samples, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("capacity exceeded: {requested} slots requested, {available} available")]
    Capacity { requested: usize, available: usize },
    #[error("malformed query message: {0}")]
    QueryDecode(String),
    #[error("output: {0}")]
    Output(String),
}
