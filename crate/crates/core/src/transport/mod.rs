//! Timestamped pose and frame streaming.

mod buffer;
mod clock;
mod framing;
mod server;

pub use buffer::{Lookup, SharedPoseBuffer, TimedPoseBuffer, DEFAULT_CAPACITY};
pub use clock::{
    clock_offset, latency_report, now_ns, offset_from_samples, ClockPeer, ClockSample, LatencyReport, OffsetEstimate,
    SimulatedLink, DEFAULT_EXCHANGES,
};
pub use framing::{
    frames, ClockMsg, Encoding, FrameMsg, Message, MsgType, Packet, PoseMsg, StreamDecoder, HEADER_LEN, MAGIC,
    MAX_PAYLOAD,
};
pub use server::{clock_pong, Carrier, CarrierClock, Server, TcpCarrier, WsCarrier};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("pose buffer is empty")]
    EmptyBuffer,
    #[error("timestamps must increase: last {last}, got {got}")]
    NonMonotonic { last: u64, got: u64 },
    #[error("framing error: bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("framing error: unknown message type {0}")]
    UnknownType(u8),
    #[error("framing error: payload of {0} bytes exceeds 64 MiB")]
    Oversized(usize),
    #[error("framing error: truncated message ({have} of {needed} bytes)")]
    Truncated { needed: usize, have: usize },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("timeout waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(String),
}
