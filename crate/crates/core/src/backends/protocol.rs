//! Length-prefixed binary framing for external segmenter backends.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HSEG"
//! 4       1     version (1)
//! 5       1     message type
//! 6       4     payload length, u32 little-endian
//! 10      n     payload
//! ```
//!
//! | type | name      | payload                                                     |
//! |------|-----------|-------------------------------------------------------------|
//! | 1    | HELLO     | UTF-8 JSON `{task, num_classes, max_tile}`                   |
//! | 2    | HELLO_ACK | same as HELLO                                                |
//! | 3    | INFER     | u32 w, u32 h, u32 c = 3, then w·h·3 RGB bytes row-major      |
//! | 4    | SCORES    | u32 w, u32 h, u32 K, then w·h·K f32 LE, row-major, channel-last |
//! | 5    | ERROR     | UTF-8 diagnostic text                                        |
//! | 6    | SHUTDOWN  | empty                                                        |
//!
//! All integers are little-endian. One request is in flight per connection.

use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Image, ScoreMap};

pub const MAGIC: [u8; 4] = *b"HSEG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
/// Upper bound on a single payload; larger length fields are treated as corruption.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    HelloAck = 2,
    Infer = 3,
    Scores = 4,
    Error = 5,
    Shutdown = 6,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        Some(match v {
            1 => MsgType::Hello,
            2 => MsgType::HelloAck,
            3 => MsgType::Infer,
            4 => MsgType::Scores,
            5 => MsgType::Error,
            6 => MsgType::Shutdown,
            _ => return None,
        })
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MsgType::Hello => "HELLO",
            MsgType::HelloAck => "HELLO_ACK",
            MsgType::Infer => "INFER",
            MsgType::Scores => "SCORES",
            MsgType::Error => "ERROR",
            MsgType::Shutdown => "SHUTDOWN",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("{msg_type} payload length {len} exceeds limit {max}")]
    PayloadTooLarge { msg_type: MsgType, len: u32, max: u32 },
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed {msg_type} payload: {reason}")]
    Malformed { msg_type: MsgType, reason: String },
    #[error("expected {expected}, received {got}")]
    Unexpected { expected: &'static str, got: MsgType },
    #[error("{msg_type} dimensions {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        msg_type: MsgType,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("{msg_type} carries {got} classes, expected {expected}")]
    ClassMismatch {
        msg_type: MsgType,
        expected: usize,
        got: usize,
    },
    #[error("handshake task mismatch: expected `{expected}`, server offers `{got}`")]
    TaskMismatch { expected: String, got: String },
    #[error("tile {w}x{h} exceeds the server's max_tile {max_tile}")]
    TileTooLarge { w: u32, h: u32, max_tile: u32 },
    #[error("remote error: {0}")]
    Remote(String),
    #[error("connection is unusable after an earlier failure")]
    Unusable,
    #[error("connection lost: {0}")]
    ConnectionLost(#[source] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame { msg_type, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it with the number of bytes used.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), ProtocolError> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let header: [u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().unwrap();
        let (msg_type, len) = parse_header(&header)?;
        let total = HEADER_LEN + len as usize;
        if bytes.len() < total {
            return Err(ProtocolError::Truncated {
                needed: total,
                available: bytes.len(),
            });
        }
        Ok((
            Frame::new(msg_type, bytes[HEADER_LEN..total].to_vec()),
            total,
        ))
    }
}

fn parse_header(header: &[u8; HEADER_LEN]) -> Result<(MsgType, u32), ProtocolError> {
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolError::UnsupportedVersion(header[4]));
    }
    let msg_type = MsgType::from_u8(header[5]).ok_or(ProtocolError::UnknownMessageType(header[5]))?;
    let len = u32::from_le_bytes(header[6..10].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge {
            msg_type,
            len,
            max: MAX_PAYLOAD,
        });
    }
    Ok((msg_type, len))
}

/// Reads one frame. A clean end of stream before the first header byte yields `Ok(None)`.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Frame>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::ConnectionLost(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("stream ended after {filled} header bytes"),
                )))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(ProtocolError::ConnectionLost(e)),
        }
    }
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    reader
        .read_exact(&mut payload)
        .map_err(ProtocolError::ConnectionLost)?;
    Ok(Some(Frame::new(msg_type, payload)))
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &Frame) -> Result<(), ProtocolError> {
    writer
        .write_all(&frame.encode())
        .and_then(|_| writer.flush())
        .map_err(ProtocolError::ConnectionLost)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub task: String,
    pub num_classes: u32,
    pub max_tile: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    HelloAck(Hello),
    Infer(Image),
    Scores(ScoreMap),
    Error(String),
    Shutdown,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::HelloAck(_) => MsgType::HelloAck,
            Message::Infer(_) => MsgType::Infer,
            Message::Scores(_) => MsgType::Scores,
            Message::Error(_) => MsgType::Error,
            Message::Shutdown => MsgType::Shutdown,
        }
    }

    pub fn to_frame(&self) -> Frame {
        let payload = match self {
            Message::Hello(h) | Message::HelloAck(h) => {
                serde_json::to_vec(h).expect("hello serializes")
            }
            Message::Infer(img) => {
                let mut p = Vec::with_capacity(12 + img.data.len());
                p.extend_from_slice(&img.width.to_le_bytes());
                p.extend_from_slice(&img.height.to_le_bytes());
                p.extend_from_slice(&3u32.to_le_bytes());
                p.extend_from_slice(&img.data);
                p
            }
            Message::Scores(map) => {
                let mut p = Vec::with_capacity(12 + map.data.len() * 4);
                p.extend_from_slice(&map.width.to_le_bytes());
                p.extend_from_slice(&map.height.to_le_bytes());
                p.extend_from_slice(&(map.num_classes as u32).to_le_bytes());
                for v in &map.data {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p
            }
            Message::Error(text) => text.as_bytes().to_vec(),
            Message::Shutdown => Vec::new(),
        };
        Frame::new(self.msg_type(), payload)
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, ProtocolError> {
        let t = frame.msg_type;
        let malformed = |reason: String| ProtocolError::Malformed { msg_type: t, reason };
        let p = &frame.payload;
        Ok(match t {
            MsgType::Hello | MsgType::HelloAck => {
                let h: Hello = serde_json::from_slice(p).map_err(|e| malformed(e.to_string()))?;
                if t == MsgType::Hello {
                    Message::Hello(h)
                } else {
                    Message::HelloAck(h)
                }
            }
            MsgType::Infer => {
                let (w, h, c) = dims_prefix(p).ok_or_else(|| malformed("missing dimension prefix".into()))?;
                if c != 3 {
                    return Err(malformed(format!("channel count {c}, expected 3")));
                }
                let expected = (w as usize)
                    .checked_mul(h as usize)
                    .and_then(|n| n.checked_mul(3))
                    .ok_or_else(|| malformed("dimensions overflow".into()))?;
                if p.len() - 12 != expected {
                    return Err(malformed(format!(
                        "{w}x{h} image needs {expected} bytes, payload has {}",
                        p.len() - 12
                    )));
                }
                Message::Infer(Image {
                    width: w,
                    height: h,
                    data: p[12..].to_vec(),
                })
            }
            MsgType::Scores => {
                let (w, h, k) = dims_prefix(p).ok_or_else(|| malformed("missing dimension prefix".into()))?;
                if k == 0 {
                    return Err(malformed("zero classes".into()));
                }
                let count = (w as usize)
                    .checked_mul(h as usize)
                    .and_then(|n| n.checked_mul(k as usize))
                    .ok_or_else(|| malformed("dimensions overflow".into()))?;
                if (p.len() - 12) != count * 4 {
                    return Err(malformed(format!(
                        "{w}x{h}x{k} scores need {} bytes, payload has {}",
                        count * 4,
                        p.len() - 12
                    )));
                }
                let data: Vec<f32> = p[12..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                    return Err(malformed(format!("non-finite score at index {i}")));
                }
                Message::Scores(ScoreMap {
                    width: w,
                    height: h,
                    num_classes: k as usize,
                    data,
                })
            }
            MsgType::Error => Message::Error(String::from_utf8_lossy(p).into_owned()),
            MsgType::Shutdown => {
                if !p.is_empty() {
                    return Err(malformed(format!("{} unexpected payload bytes", p.len())));
                }
                Message::Shutdown
            }
        })
    }
}

fn dims_prefix(p: &[u8]) -> Option<(u32, u32, u32)> {
    if p.len() < 12 {
        return None;
    }
    let word = |i: usize| u32::from_le_bytes(p[i..i + 4].try_into().unwrap());
    Some((word(0), word(4), word(8)))
}

pub fn send<W: Write>(writer: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    write_frame(writer, &msg.to_frame())
}

/// Receives one message; end of stream is reported as a lost connection.
pub fn recv<R: Read>(reader: &mut R) -> Result<Message, ProtocolError> {
    match read_frame(reader)? {
        Some(frame) => Message::from_frame(&frame),
        None => Err(ProtocolError::ConnectionLost(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "peer closed the stream",
        ))),
    }
}
