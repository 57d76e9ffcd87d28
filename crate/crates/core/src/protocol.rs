// Licensed under the Apache-2.0 license

//! Frame format for the half-duplex servo bus.
//!
//! Every frame, in either direction, is laid out as
//!
//! ```text
//! 0xFF 0xFF | id | length | instruction-or-error | params ... | checksum
//! ```
//!
//! `length` counts the instruction/error byte, the params and the checksum
//! (`params.len() + 2`). The checksum is the bitwise complement of the low
//! byte of the sum of every byte from `id` through the last param.

use thiserror::Error;

pub const SYNC: [u8; 2] = [0xFF, 0xFF];
pub const BROADCAST_ID: u8 = 0xFE;
pub const MAX_DEVICE_ID: u8 = 0xFD;
pub const MAX_PARAMS: usize = 250;
/// Sync, id, length, instruction and checksum.
pub const FRAME_OVERHEAD: usize = 6;

/// Status error bits.
pub mod error_bits {
    pub const INSTRUCTION: u8 = 1 << 0;
    pub const CHECKSUM: u8 = 1 << 1;
    pub const ADDRESS: u8 = 1 << 2;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("params too long: {0} bytes (max {MAX_PARAMS})")]
    ParamsTooLong(usize),
    #[error("device id {0:#04x} is not addressable")]
    BadDeviceId(u8),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    /// No complete frame yet. `skipped` bytes before the first candidate sync
    /// can be discarded by the caller.
    #[error("need more bytes")]
    NeedMoreBytes { skipped: usize },
    #[error("checksum mismatch (expected {expected:#04x}, got {actual:#04x})")]
    Checksum {
        device_id: u8,
        expected: u8,
        actual: u8,
        consumed: usize,
    },
    /// Frame checksummed correctly but its content is not a valid packet.
    #[error("malformed packet: {reason}")]
    Malformed {
        device_id: u8,
        reason: &'static str,
        consumed: usize,
    },
}

impl FrameError {
    /// Bytes the caller should drop before retrying.
    pub fn consumed(&self) -> usize {
        match *self {
            FrameError::NeedMoreBytes { skipped } => skipped,
            FrameError::Checksum { consumed, .. } | FrameError::Malformed { consumed, .. } => {
                consumed
            }
        }
    }
}

pub fn compute_checksum(body: &[u8]) -> u8 {
    !body.iter().fold(0u8, |acc, b| acc.wrapping_add(*b))
}

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Ping = 0x01,
    Read = 0x02,
    Write = 0x03,
}

impl TryFrom<u8> for Instruction {
    type Error = u8;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0x01 => Ok(Instruction::Ping),
            0x02 => Ok(Instruction::Read),
            0x03 => Ok(Instruction::Write),
            other => Err(other),
        }
    }
}

/// One framed request on the bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub device_id: u8,
    pub instruction: Instruction,
    pub params: Vec<u8>,
}

impl Packet {
    pub fn ping(device_id: u8) -> Self {
        Packet {
            device_id,
            instruction: Instruction::Ping,
            params: Vec::new(),
        }
    }

    pub fn read(device_id: u8, start_address: u8, length: u8) -> Self {
        Packet {
            device_id,
            instruction: Instruction::Read,
            params: vec![start_address, length],
        }
    }

    pub fn write(device_id: u8, start_address: u8, payload: &[u8]) -> Self {
        let mut params = Vec::with_capacity(payload.len() + 1);
        params.push(start_address);
        params.extend_from_slice(payload);
        Packet {
            device_id,
            instruction: Instruction::Write,
            params,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        self.device_id == BROADCAST_ID
    }

    pub fn checksum(&self) -> u8 {
        frame_checksum(self.device_id, self.instruction as u8, &self.params)
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        if self.device_id > BROADCAST_ID {
            return Err(EncodeError::BadDeviceId(self.device_id));
        }
        encode_frame(self.device_id, self.instruction as u8, &self.params)
    }

    /// Decodes the first well-formed request in `stream`, skipping any
    /// leading bytes that do not start a frame.
    pub fn decode(stream: &[u8]) -> Result<(Packet, usize), FrameError> {
        let (frame, consumed) = decode_frame(stream)?;
        let instruction = Instruction::try_from(frame.code).map_err(|_| FrameError::Malformed {
            device_id: frame.device_id,
            reason: "unknown instruction",
            consumed,
        })?;
        let arity_ok = match instruction {
            Instruction::Ping => frame.params.is_empty(),
            Instruction::Read => frame.params.len() == 2,
            Instruction::Write => frame.params.len() >= 2,
        };
        if !arity_ok {
            return Err(FrameError::Malformed {
                device_id: frame.device_id,
                reason: "parameter count does not match instruction",
                consumed,
            });
        }
        Ok((
            Packet {
                device_id: frame.device_id,
                instruction,
                params: frame.params,
            },
            consumed,
        ))
    }
}

pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, EncodeError> {
    p.encode()
}

pub fn decode_packet(stream: &[u8]) -> Result<(Packet, usize), FrameError> {
    Packet::decode(stream)
}

/// Device reply to a unicast request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusPacket {
    pub device_id: u8,
    pub error_flags: u8,
    pub params: Vec<u8>,
}

impl StatusPacket {
    pub fn ok(device_id: u8, params: Vec<u8>) -> Self {
        StatusPacket {
            device_id,
            error_flags: 0,
            params,
        }
    }

    pub fn error(device_id: u8, error_flags: u8) -> Self {
        StatusPacket {
            device_id,
            error_flags,
            params: Vec::new(),
        }
    }

    pub fn checksum(&self) -> u8 {
        frame_checksum(self.device_id, self.error_flags, &self.params)
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        if self.device_id > MAX_DEVICE_ID {
            return Err(EncodeError::BadDeviceId(self.device_id));
        }
        encode_frame(self.device_id, self.error_flags, &self.params)
    }

    pub fn decode(stream: &[u8]) -> Result<(StatusPacket, usize), FrameError> {
        let (frame, consumed) = decode_frame(stream)?;
        if frame.device_id > MAX_DEVICE_ID {
            return Err(FrameError::Malformed {
                device_id: frame.device_id,
                reason: "status from broadcast id",
                consumed,
            });
        }
        Ok((
            StatusPacket {
                device_id: frame.device_id,
                error_flags: frame.code,
                params: frame.params,
            },
            consumed,
        ))
    }
}

/// A checksum-valid frame before the instruction/error byte is interpreted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub device_id: u8,
    pub code: u8,
    pub params: Vec<u8>,
}

fn frame_checksum(id: u8, code: u8, params: &[u8]) -> u8 {
    let length = (params.len() + 2) as u8;
    let head = id.wrapping_add(length).wrapping_add(code);
    !params.iter().fold(head, |acc, b| acc.wrapping_add(*b))
}

fn encode_frame(id: u8, code: u8, params: &[u8]) -> Result<Vec<u8>, EncodeError> {
    if params.len() > MAX_PARAMS {
        return Err(EncodeError::ParamsTooLong(params.len()));
    }
    let mut out = Vec::with_capacity(params.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&SYNC);
    out.push(id);
    out.push((params.len() + 2) as u8);
    out.push(code);
    out.extend_from_slice(params);
    out.push(frame_checksum(id, code, params));
    Ok(out)
}

/// Scans for the first frame in `stream`.
///
/// A sync pair followed by an impossible header (id 0xFF, or a length byte
/// outside `2..=MAX_PARAMS + 2`) is treated as a false sync and scanning
/// resumes one byte later. A checksum failure consumes the whole candidate
/// frame.
pub fn decode_frame(stream: &[u8]) -> Result<(RawFrame, usize), FrameError> {
    let mut start = 0;
    loop {
        let Some(offset) = find_sync(&stream[start..]) else {
            // A trailing lone 0xFF may be the first half of a sync pair.
            let keep = usize::from(stream.last() == Some(&0xFF));
            return Err(FrameError::NeedMoreBytes {
                skipped: stream.len() - keep,
            });
        };
        start += offset;
        let rest = &stream[start..];
        if rest.len() < 4 {
            return Err(FrameError::NeedMoreBytes { skipped: start });
        }
        let id = rest[2];
        let length = rest[3] as usize;
        if id == 0xFF || !(2..=MAX_PARAMS + 2).contains(&length) {
            start += 1;
            continue;
        }
        let total = length + 4;
        if rest.len() < total {
            return Err(FrameError::NeedMoreBytes { skipped: start });
        }
        let code = rest[4];
        let params = &rest[5..total - 1];
        let actual = rest[total - 1];
        let expected = frame_checksum(id, code, params);
        let consumed = start + total;
        if actual != expected {
            return Err(FrameError::Checksum {
                device_id: id,
                expected,
                actual,
                consumed,
            });
        }
        return Ok((
            RawFrame {
                device_id: id,
                code,
                params: params.to_vec(),
            },
            consumed,
        ));
    }
}

fn find_sync(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == SYNC)
}
