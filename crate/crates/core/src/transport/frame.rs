//! Frame layout, little-endian:
//!
//! ```text
//! magic[4] "HXIT" | version u8 | kind u8 | step u64 | rank u32 | rank_count u32 | payload_len u64 | payload
//! ```

use std::io::{self, Read};

use super::TransportError;

pub const MAGIC: [u8; 4] = *b"HXIT";
pub const VERSION: u8 = 1;
/// 4 + 1 + 1 + 8 + 4 + 4 + 8
pub const HEADER_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Data = 0,
    EndOfStream = 1,
    Handshake = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: FrameKind,
    pub step: u64,
    pub rank: u32,
    pub rank_count: u32,
    pub payload_len: u64,
}

impl FrameHeader {
    pub fn control(kind: FrameKind, step: u64, rank: u32, rank_count: u32) -> Self {
        FrameHeader {
            kind,
            step,
            rank,
            rank_count,
            payload_len: 0,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4] = VERSION;
        out[5] = self.kind as u8;
        out[6..14].copy_from_slice(&self.step.to_le_bytes());
        out[14..18].copy_from_slice(&self.rank.to_le_bytes());
        out[18..22].copy_from_slice(&self.rank_count.to_le_bytes());
        out[22..30].copy_from_slice(&self.payload_len.to_le_bytes());
        out
    }

    /// `offset` is the position of the header in its stream, used in errors.
    pub fn decode(raw: &[u8; HEADER_LEN], offset: u64) -> Result<Self, TransportError> {
        if raw[0..4] != MAGIC {
            return Err(TransportError::BadMagic {
                offset,
                found: raw[0..4].try_into().unwrap(),
            });
        }
        if raw[4] != VERSION {
            return Err(TransportError::BadVersion {
                offset: offset + 4,
                found: raw[4],
            });
        }
        let kind = match raw[5] {
            0 => FrameKind::Data,
            1 => FrameKind::EndOfStream,
            2 => FrameKind::Handshake,
            other => {
                return Err(TransportError::UnknownFrameKind {
                    offset: offset + 5,
                    kind: other,
                })
            }
        };
        let u64_at = |i: usize| u64::from_le_bytes(raw[i..i + 8].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(raw[i..i + 4].try_into().unwrap());
        let header = FrameHeader {
            kind,
            step: u64_at(6),
            rank: u32_at(14),
            rank_count: u32_at(18),
            payload_len: u64_at(22),
        };
        if kind != FrameKind::Data && header.payload_len != 0 {
            return Err(TransportError::Protocol {
                offset: offset + 22,
                reason: format!("{kind:?} frame with payload_len {}", header.payload_len),
            });
        }
        Ok(header)
    }
}

/// Header plus raw payload bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
    /// Stream offset of the frame's first byte.
    pub offset: u64,
}

pub fn encode_frame(header: &FrameHeader, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    let mut h = *header;
    h.payload_len = payload.len() as u64;
    out.extend_from_slice(&h.encode());
    out.extend_from_slice(payload);
    out
}

fn read_full(src: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match src.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads one frame. `Ok(None)` on a clean end of input at a frame boundary.
/// `offset` is advanced past the frame.
pub fn read_frame(src: &mut impl Read, offset: &mut u64) -> Result<Option<RawFrame>, TransportError> {
    let start = *offset;
    let mut raw = [0u8; HEADER_LEN];
    let got = read_full(src, &mut raw)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        // report a bad magic before complaining about length
        if got >= 4 && raw[0..4] != MAGIC {
            return Err(TransportError::BadMagic {
                offset: start,
                found: raw[0..4].try_into().unwrap(),
            });
        }
        return Err(TransportError::Truncated {
            offset: start,
            expected: HEADER_LEN as u64,
            got: got as u64,
        });
    }
    let header = FrameHeader::decode(&raw, start)?;
    let mut payload = Vec::new();
    let n = src.take(header.payload_len).read_to_end(&mut payload)? as u64;
    if n < header.payload_len {
        return Err(TransportError::Truncated {
            offset: start,
            expected: HEADER_LEN as u64 + header.payload_len,
            got: HEADER_LEN as u64 + n,
        });
    }
    *offset = start + HEADER_LEN as u64 + n;
    Ok(Some(RawFrame {
        header,
        payload,
        offset: start,
    }))
}
