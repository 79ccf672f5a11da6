//! Length-prefixed message framing and the request/response vocabulary.
//!
//! Each frame is a 4-byte big-endian payload length followed by a UTF-8 JSON
//! object whose `type` field names the message.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::bundle::ModelKind;
use super::upload::SensorBatch;

pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Request {
    GetParams { model_kind: ModelKind },
    PushData { batch: SensorBatch },
    Ping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    Oversized,
    UnsupportedKind,
    InvalidBatch,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Response {
    /// `bundle` holds the encoded bundle document verbatim.
    Params { bundle: String },
    NotReady { model_kind: ModelKind },
    Ack { stored: usize },
    Pong,
    Error { code: ErrorCode, message: String },
}

#[derive(Debug)]
pub enum FrameError {
    Io(io::Error),
    /// Connection closed cleanly before a new frame started.
    Closed,
    Oversized(usize),
}

impl From<io::Error> for FrameError {
    fn from(e: io::Error) -> Self {
        FrameError::Io(e)
    }
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("frame of {} bytes exceeds {}", payload.len(), MAX_FRAME_LEN),
        ));
    }
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one frame. An oversized length prefix is reported without reading
/// the body, so the caller should close the stream afterwards.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, FrameError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(FrameError::Io(e)),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversized(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn write_message<W: Write, M: Serialize>(w: &mut W, msg: &M) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 5]);
        let mut cur = io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cur).unwrap(), b"hello");
        assert_eq!(read_frame(&mut cur).unwrap(), b"");
        assert!(matches!(read_frame(&mut cur), Err(FrameError::Closed)));
    }

    #[test]
    fn oversized_prefix_rejected_before_body() {
        let len = (MAX_FRAME_LEN as u32 + 1).to_be_bytes();
        let mut cur = io::Cursor::new(len.to_vec());
        assert!(matches!(read_frame(&mut cur), Err(FrameError::Oversized(n)) if n == MAX_FRAME_LEN + 1));
    }

    #[test]
    fn truncated_frame_is_io_error() {
        let mut cur = io::Cursor::new(vec![0, 0, 0, 9, b'x']);
        assert!(matches!(read_frame(&mut cur), Err(FrameError::Io(_))));
    }

    #[test]
    fn message_layouts() {
        let ping = serde_json::to_string(&Request::Ping).unwrap();
        assert_eq!(ping, r#"{"type":"PING"}"#);
        let get = serde_json::to_string(&Request::GetParams {
            model_kind: ModelKind::Cl,
        })
        .unwrap();
        assert_eq!(get, r#"{"type":"GET_PARAMS","model_kind":"CL"}"#);
        let nr = serde_json::to_string(&Response::NotReady {
            model_kind: ModelKind::Dcl,
        })
        .unwrap();
        assert_eq!(nr, r#"{"type":"NOT_READY","model_kind":"DCL"}"#);
        let err = serde_json::to_string(&Response::Error {
            code: ErrorCode::UnsupportedKind,
            message: "x".into(),
        })
        .unwrap();
        assert_eq!(err, r#"{"type":"ERROR","code":"UNSUPPORTED_KIND","message":"x"}"#);
        assert_eq!(serde_json::to_string(&Response::Ack { stored: 3 }).unwrap(), r#"{"type":"ACK","stored":3}"#);
    }
}
