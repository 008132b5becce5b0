//! Frame layout: `[type u8][payload length u32 BE][payload]`.

use std::io::{Read, Write};

use super::ProtocolError;

/// Upper bound on a single payload.
pub const MAX_PAYLOAD: usize = 1 << 24;
pub const HEADER_BYTES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    IsCt = 1,
    SampleIdx = 2,
    Syndrome = 3,
    Verify = 4,
    PaSeed = 5,
    KemPk = 6,
    KemCt = 7,
    HeEnv = 8,
    Mac = 9,
    Abort = 10,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        use FrameType::*;
        Some(match b {
            1 => IsCt,
            2 => SampleIdx,
            3 => Syndrome,
            4 => Verify,
            5 => PaSeed,
            6 => KemPk,
            7 => KemCt,
            8 => HeEnv,
            9 => Mac,
            10 => Abort,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ty: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ty: FrameType, payload: Vec<u8>) -> Self {
        Frame { ty, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len());
        out.push(self.ty as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < HEADER_BYTES {
            return Err(ProtocolError::Frame("truncated header".into()));
        }
        let ty = FrameType::from_byte(bytes[0]).ok_or_else(|| ProtocolError::Frame(format!("unknown type {}", bytes[0])))?;
        let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Frame(format!("payload of {len} bytes exceeds limit")));
        }
        if bytes.len() != HEADER_BYTES + len {
            return Err(ProtocolError::Frame(format!(
                "length field says {len}, frame carries {}",
                bytes.len() - HEADER_BYTES
            )));
        }
        Ok(Frame { ty, payload: bytes[HEADER_BYTES..].to_vec() })
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ProtocolError> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)?;
        let len = u32::from_be_bytes(header[1..5].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(ProtocolError::Frame(format!("payload of {len} bytes exceeds limit")));
        }
        let mut buf = header.to_vec();
        buf.resize(HEADER_BYTES + len, 0);
        r.read_exact(&mut buf[HEADER_BYTES..])?;
        Frame::decode(&buf)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ProtocolError> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }
}
