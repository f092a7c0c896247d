//! Wire format.
//!
//! Every message is `0x53 0x56 | type: u8 | length: u32 LE | payload`.
//! Multi-byte payload fields are little-endian.

use crate::geom::Pose;
use crate::transport::TransportError;

pub const MAGIC: [u8; 2] = [0x53, 0x56];
pub const HEADER_LEN: usize = 7;
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Frame = 1,
    Pose = 2,
    ClockPing = 3,
    ClockPong = 4,
    /// JSON configuration change, e.g. `{"r": 0.5}`.
    ConfigUpdate = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Frame,
            2 => Self::Pose,
            3 => Self::ClockPing,
            4 => Self::ClockPong,
            5 => Self::ConfigUpdate,
            _ => return None,
        })
    }
}

/// A framed message with an uninterpreted payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub kind: MsgType,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn encode(&self) -> Result<Vec<u8>, TransportError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(TransportError::Oversized(self.payload.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes one packet from the start of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Packet, usize), TransportError> {
        if bytes.len() < HEADER_LEN {
            return Err(TransportError::Truncated {
                needed: HEADER_LEN,
                have: bytes.len(),
            });
        }
        let len = check_header(bytes)?;
        let total = HEADER_LEN + len;
        if bytes.len() < total {
            return Err(TransportError::Truncated {
                needed: total,
                have: bytes.len(),
            });
        }
        let kind = MsgType::from_u8(bytes[2]).expect("header checked");
        Ok((
            Packet {
                kind,
                payload: bytes[HEADER_LEN..total].to_vec(),
            },
            total,
        ))
    }
}

/// Validates magic, type and length; returns the payload length.
fn check_header(bytes: &[u8]) -> Result<usize, TransportError> {
    if bytes[..2] != MAGIC {
        return Err(TransportError::BadMagic([bytes[0], bytes[1]]));
    }
    if MsgType::from_u8(bytes[2]).is_none() {
        return Err(TransportError::UnknownType(bytes[2]));
    }
    let len = u32::from_le_bytes(bytes[3..7].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(TransportError::Oversized(len));
    }
    Ok(len)
}

/// Incremental decoder for a byte stream. After a framing error it skips
/// ahead to the next magic sequence.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        } else if self.start > 64 * 1024 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet decoded.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Next packet, a framing error (after which decoding continues at the
    /// next magic), or `None` when more bytes are needed.
    pub fn next_packet(&mut self) -> Option<Result<Packet, TransportError>> {
        let data = &self.buf[self.start..];
        if data.len() < HEADER_LEN {
            // A lone garbage prefix can be discarded before the header is
            // complete.
            if let Some(skip) = garbage_prefix(data) {
                self.start += skip;
                return Some(Err(TransportError::BadMagic([data[0], *data.get(1).unwrap_or(&0)])));
            }
            return None;
        }
        match Packet::decode(data) {
            Ok((packet, used)) => {
                self.start += used;
                Some(Ok(packet))
            }
            Err(TransportError::Truncated { .. }) => None,
            Err(e) => {
                self.resync();
                Some(Err(e))
            }
        }
    }

    fn resync(&mut self) {
        let data = &self.buf[self.start..];
        let skip = data[1..]
            .windows(2)
            .position(|w| w == MAGIC)
            .map(|p| p + 1)
            .unwrap_or_else(|| {
                if data.last() == Some(&MAGIC[0]) {
                    data.len() - 1
                } else {
                    data.len()
                }
            });
        self.start += skip;
    }
}

/// Length of a prefix that cannot start a packet, if any.
fn garbage_prefix(data: &[u8]) -> Option<usize> {
    match data {
        [] => None,
        [a] if *a == MAGIC[0] => None,
        [a, b, ..] if [*a, *b] == MAGIC => None,
        _ => {
            let skip = data[1..]
                .iter()
                .position(|&b| b == MAGIC[0])
                .map(|p| p + 1)
                .unwrap_or(data.len());
            Some(skip)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Encoding {
    RawRgb8 = 0,
    Jpeg = 1,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameMsg {
    pub capture_timestamp_ns: u64,
    pub camera_id: u8,
    pub encoding: Encoding,
    pub width: u16,
    pub height: u16,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseMsg {
    pub timestamp_ns: u64,
    pub frame_id: u8,
    /// `qw, qx, qy, qz, tx, ty, tz`.
    pub pose: [f64; 7],
}

impl PoseMsg {
    pub fn from_pose(timestamp_ns: u64, frame_id: u8, p: &Pose) -> Self {
        let q = p.quaternion_wxyz();
        let t = p.translation();
        Self {
            timestamp_ns,
            frame_id,
            pose: [q[0], q[1], q[2], q[3], t.x, t.y, t.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose, TransportError> {
        let p = self.pose;
        Pose::from_wxyz([p[0], p[1], p[2], p[3]], [p[4], p[5], p[6]])
            .map_err(|e| TransportError::Malformed(format!("pose: {e}")))
    }
}

/// Two-way clock exchange stamps: `t1` client send, `t2` server receive,
/// `t3` server reply. A ping carries only `t1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClockMsg {
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
}

/// Frame ids used in pose messages.
pub mod frames {
    /// Operator head in VR space.
    pub const VR_HEAD: u8 = 0;
    /// Robot head in robot space.
    pub const ROBOT_HEAD: u8 = 1;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Frame(FrameMsg),
    Pose(PoseMsg),
    ClockPing(ClockMsg),
    ClockPong(ClockMsg),
    ConfigUpdate(serde_json::Value),
}

impl Message {
    pub fn kind(&self) -> MsgType {
        match self {
            Message::Frame(_) => MsgType::Frame,
            Message::Pose(_) => MsgType::Pose,
            Message::ClockPing(_) => MsgType::ClockPing,
            Message::ClockPong(_) => MsgType::ClockPong,
            Message::ConfigUpdate(_) => MsgType::ConfigUpdate,
        }
    }

    pub fn to_packet(&self) -> Result<Packet, TransportError> {
        let mut p = Vec::new();
        match self {
            Message::Frame(f) => {
                check_frame(f.encoding, f.width, f.height, f.payload.len())?;
                p.reserve(14 + f.payload.len());
                p.extend_from_slice(&f.capture_timestamp_ns.to_le_bytes());
                p.push(f.camera_id);
                p.push(f.encoding as u8);
                p.extend_from_slice(&f.width.to_le_bytes());
                p.extend_from_slice(&f.height.to_le_bytes());
                p.extend_from_slice(&f.payload);
            }
            Message::Pose(m) => {
                p.extend_from_slice(&m.timestamp_ns.to_le_bytes());
                p.push(m.frame_id);
                for v in m.pose {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::ClockPing(c) | Message::ClockPong(c) => {
                for v in [c.t1, c.t2, c.t3] {
                    p.extend_from_slice(&v.to_le_bytes());
                }
            }
            Message::ConfigUpdate(v) => {
                p = serde_json::to_vec(v).map_err(|e| TransportError::Malformed(e.to_string()))?;
            }
        }
        Ok(Packet {
            kind: self.kind(),
            payload: p,
        })
    }

    pub fn from_packet(packet: &Packet) -> Result<Message, TransportError> {
        let p = &packet.payload;
        let malformed = |what: &str| TransportError::Malformed(format!("{what}: {} payload bytes", p.len()));
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().expect("8 bytes"));
        Ok(match packet.kind {
            MsgType::Frame => {
                if p.len() < 14 {
                    return Err(malformed("frame header"));
                }
                let encoding = match p[9] {
                    0 => Encoding::RawRgb8,
                    1 => Encoding::Jpeg,
                    e => return Err(TransportError::Malformed(format!("unknown encoding {e}"))),
                };
                let width = u16::from_le_bytes([p[10], p[11]]);
                let height = u16::from_le_bytes([p[12], p[13]]);
                check_frame(encoding, width, height, p.len() - 14)?;
                Message::Frame(FrameMsg {
                    capture_timestamp_ns: u64_at(0),
                    camera_id: p[8],
                    encoding,
                    width,
                    height,
                    payload: p[14..].to_vec(),
                })
            }
            MsgType::Pose => {
                if p.len() != 65 {
                    return Err(malformed("pose"));
                }
                let mut pose = [0.0; 7];
                for (k, v) in pose.iter_mut().enumerate() {
                    *v = f64::from_le_bytes(p[9 + 8 * k..17 + 8 * k].try_into().expect("8 bytes"));
                }
                Message::Pose(PoseMsg {
                    timestamp_ns: u64_at(0),
                    frame_id: p[8],
                    pose,
                })
            }
            MsgType::ClockPing | MsgType::ClockPong => {
                if p.len() != 24 {
                    return Err(malformed("clock"));
                }
                let c = ClockMsg {
                    t1: u64_at(0),
                    t2: u64_at(8),
                    t3: u64_at(16),
                };
                if packet.kind == MsgType::ClockPing {
                    Message::ClockPing(c)
                } else {
                    Message::ClockPong(c)
                }
            }
            MsgType::ConfigUpdate => Message::ConfigUpdate(
                serde_json::from_slice(p).map_err(|e| TransportError::Malformed(format!("config update: {e}")))?,
            ),
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>, TransportError> {
        self.to_packet()?.encode()
    }

    /// Decodes exactly one message occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Message, TransportError> {
        let (packet, used) = Packet::decode(bytes)?;
        if used != bytes.len() {
            return Err(TransportError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - used
            )));
        }
        Message::from_packet(&packet)
    }
}

fn check_frame(encoding: Encoding, width: u16, height: u16, len: usize) -> Result<(), TransportError> {
    if encoding == Encoding::RawRgb8 && len != width as usize * height as usize * 3 {
        return Err(TransportError::Malformed(format!(
            "raw frame {width}x{height} needs {} bytes, got {len}",
            width as usize * height as usize * 3
        )));
    }
    Ok(())
}
