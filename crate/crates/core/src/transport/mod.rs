//! Framed step transport between simulation ranks and a single receiver.
//!
//! Two endpoint forms carry identical frame bytes: a TCP stream (`host:port`)
//! and a staging directory (`file://<dir>`) holding one file per frame.

use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::node::DecodeError;

mod frame;
mod reader;
mod replay;
mod throttle;
mod writer;

pub use frame::{encode_frame, read_frame, FrameHeader, FrameKind, RawFrame, HEADER_LEN, MAGIC, VERSION};
pub use reader::{Handshake, Reader, Received, StepPart};
pub use replay::{replay_loop, AssembledStep, ReplaySummary};
pub use throttle::{Throttle, ThrottleConfig, CHUNK_SIZE};
pub use writer::{open_writer, open_writer_with, SendStats, Writer, WriterOptions, HANDSHAKE_TIMEOUT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Socket(String),
    Staging(PathBuf),
}

impl FromStr for Endpoint {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(dir) = s.strip_prefix("file://") {
            if dir.is_empty() {
                return Err(TransportError::InvalidEndpoint(s.to_string()));
            }
            return Ok(Endpoint::Staging(PathBuf::from(dir)));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::Socket(s.to_string()))
            }
            _ => Err(TransportError::InvalidEndpoint(s.to_string())),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Socket(addr) => f.write_str(addr),
            Endpoint::Staging(dir) => write!(f, "file://{}", dir.display()),
        }
    }
}

/// Staging file name of a data frame.
pub fn staging_file_name(step: u64, rank: u32) -> String {
    format!("step{step}_rank{rank}.hxit")
}

/// Staging file name of a rank's end-of-stream frame.
pub fn staging_eos_name(rank: u32) -> String {
    format!("eos_rank{rank}.hxit")
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid endpoint {0:?}: expected host:port or file://<dir>")]
    InvalidEndpoint(String),
    #[error("cannot connect to {endpoint}: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("rank {rank}: step {step} is not after previously sent step {last}")]
    StepOrder { rank: u32, last: u64, step: u64 },
    #[error("rank {rank} already sent end-of-stream")]
    AfterEndOfStream { rank: u32 },
    #[error("bad magic {found:02x?} at offset {offset}")]
    BadMagic { offset: u64, found: [u8; 4] },
    #[error("unsupported frame version {found} at offset {offset}")]
    BadVersion { offset: u64, found: u8 },
    #[error("unknown frame kind {kind} at offset {offset}")]
    UnknownFrameKind { offset: u64, kind: u8 },
    #[error("protocol error at offset {offset}: {reason}")]
    Protocol { offset: u64, reason: String },
    #[error("stream truncated in frame at offset {offset}: expected {expected} bytes, got {got}")]
    Truncated { offset: u64, expected: u64, got: u64 },
    #[error("payload of frame at offset {offset} does not decode: {source}")]
    Decode {
        offset: u64,
        #[source]
        source: DecodeError,
    },
    #[error("rank {rank} reports rank_count {found}, run uses {expected}")]
    RankCountMismatch { rank: u32, expected: u32, found: u32 },
    #[error("duplicate data for step {step} rank {rank}")]
    DuplicateStep { step: u64, rank: u32 },
    #[error("rank {rank} out of range for rank_count {rank_count}")]
    RankOutOfRange { rank: u32, rank_count: u32 },
    #[error("step {step} incomplete at end of stream: {received} of {expected} parts")]
    IncompleteStep { step: u64, received: u32, expected: u32 },
    #[error("reader closed")]
    Disconnected,
    #[error("sink failed on step {step}: {message}")]
    Sink { step: u64, message: String },
}

impl TransportError {
    /// True for malformed-frame errors (as opposed to I/O or ordering).
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            TransportError::BadMagic { .. }
                | TransportError::BadVersion { .. }
                | TransportError::UnknownFrameKind { .. }
                | TransportError::Protocol { .. }
                | TransportError::Decode { .. }
        )
    }
}
