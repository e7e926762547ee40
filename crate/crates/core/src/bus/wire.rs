//! Framed wire protocol for the bus.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The JSON object carries a `kind` discriminator plus
//! kind-specific fields; payloads travel base64-encoded. Frames above 1 MiB
//! are rejected on both send and receive. The same frames run over TCP and
//! over the in-process pipe transport.

use std::io::{self, Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on the JSON body of one frame.
pub const MAX_FRAME_BYTES: usize = 1024 * 1024;

/// Status codes carried by CONNACK / PUBACK / SUBACK / CLOSE.
pub mod code {
    pub const OK: u32 = 0;
    pub const AUTH_FAILURE: u32 = 1;
    pub const INVALID_TOPIC: u32 = 2;
    pub const NOT_CONNECTED: u32 = 3;
    pub const OVERFLOW: u32 = 4;
    pub const SUPERSEDED: u32 = 5;
    pub const PROTOCOL_ERROR: u32 = 6;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the 1 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid base64 payload: {0}")]
    Payload(#[from] base64::DecodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One protocol frame. Client-to-broker PUBACK acknowledges a MSG delivery;
/// broker-to-client PUBACK acknowledges a PUB, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Frame {
    #[serde(rename = "CONNECT")]
    Connect { client_id: String, token: String },
    #[serde(rename = "CONNACK")]
    ConnAck { code: u32 },
    #[serde(rename = "PUB")]
    Pub {
        topic: String,
        /// base64-encoded bytes
        payload: String,
    },
    #[serde(rename = "PUBACK")]
    PubAck { msg_id: u64, code: u32 },
    #[serde(rename = "SUB")]
    Sub { pattern: String },
    #[serde(rename = "SUBACK")]
    SubAck { pattern: String, code: u32 },
    #[serde(rename = "MSG")]
    Msg {
        msg_id: u64,
        topic: String,
        /// base64-encoded bytes
        payload: String,
        publisher_id: String,
        ts: u64,
    },
    #[serde(rename = "PING")]
    Ping,
    #[serde(rename = "PONG")]
    Pong,
    #[serde(rename = "CLOSE")]
    Close { code: u32 },
}

impl Frame {
    pub fn pub_from_bytes(topic: &str, payload: &[u8]) -> Frame {
        Frame::Pub {
            topic: topic.to_string(),
            payload: BASE64.encode(payload),
        }
    }

    /// Decode a base64 payload field from a PUB or MSG frame.
    pub fn decode_payload(payload: &str) -> Result<Vec<u8>, WireError> {
        Ok(BASE64.decode(payload)?)
    }

    pub fn encode_payload(payload: &[u8]) -> String {
        BASE64.encode(payload)
    }
}

/// Serialize one frame with its length prefix.
pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let body = serde_json::to_vec(frame)?;
    if body.len() > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Write one frame.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    let bytes = encode_frame(frame)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Read one frame. Returns `Ok(None)` on a clean EOF at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, WireError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let frame = serde_json::from_slice(&body)?;
    Ok(Some(frame))
}
