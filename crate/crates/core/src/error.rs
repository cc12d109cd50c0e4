use std::io;

use thiserror::Error;

use crate::protocol::Violation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PixelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    /// A slot was not in the state the operation requires.
    #[error("protocol violation on slot {slot}: expected {expected}, found {found}")]
    ProtocolViolation {
        slot: usize,
        expected: &'static str,
        found: String,
    },
    /// A status word holds a value outside the four frame states.
    #[error("slot {slot} has corrupt status word {value:#x}")]
    CorruptStatus { slot: usize, value: u32 },
    #[error("slot {slot} has sequence {sequence}, not newer than presented {presented}")]
    StaleSequence {
        slot: usize,
        sequence: u64,
        presented: u64,
    },
    #[error("slot handle {0} out of range")]
    InvalidHandle(usize),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("region of {available} bytes is too small, {required} bytes required")]
    Capacity { required: usize, available: usize },
    #[error("incompatible protocol: magic {found:#010x}")]
    IncompatibleProtocol { found: u32 },
    #[error("corrupt region: {}", describe(.0))]
    CorruptRegion(Vec<Violation>),
    #[error("server did not publish the region within {waited_us}us")]
    ServerUnavailable { waited_us: u64 },
    #[error("invalid region configuration: {0}")]
    InvalidConfig(String),
    #[error("no pixel format in common with the server")]
    NoCommonFormat,
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn describe(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<PixelError> for ProtocolError {
    fn from(e: PixelError) -> Self {
        ProtocolError::InvalidConfig(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("sink rejected frame: {0}")]
    Rejected(String),
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("usage error: {0}")]
    Usage(&'static str),
    #[error("session lost: the compositor disconnected this client")]
    SessionLost,
    #[error("present failure: {0}")]
    PresentFailure(#[from] SinkError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

#[derive(Debug, Error)]
pub enum CompositorError {
    #[error("placement {placement} overlaps client {other}")]
    PlacementConflict { placement: String, other: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("region rejected: {}", describe(.0))]
    Rejected(Vec<Violation>),
    #[error("client {0} not found")]
    NotFound(u32),
    #[error("client {0} is already connected")]
    AlreadyConnected(u32),
    #[error("present failure: {0}")]
    PresentFailure(#[from] SinkError),
}

impl From<PixelError> for CompositorError {
    fn from(e: PixelError) -> Self {
        match e {
            PixelError::InvalidArgument(msg) => CompositorError::InvalidArgument(msg),
        }
    }
}
