// Licensed under the Apache-2.0 license

//! On-board experiment record.
//!
//! ```text
//! offset size  field
//! 0      4     seq                u32
//! 4      4     timestamp_ms       u32
//! 8      2     experiment_id      u16
//! 10     2     tof_mm             u16
//! 12     1     tof_valid          u8
//! 13     8     servo_current_ma   4 x u16 (load A, load B, release, wrist)
//! 21     8     servo_command      4 x u16
//! 29     2     status             u16
//! 31     2     grasp_delay_ms     u16
//! 33     2     crc16              u16, CRC-16/CCITT (init 0xFFFF) of bytes 0..33
//! ```
//! All fields little-endian.

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_LEN: usize = 35;
const CRC_OFFSET: usize = 33;

const CCITT: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CCITT.checksum(bytes)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("record crc mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    Crc { stored: u16, computed: u16 },
    #[error("record must be {RECORD_LEN} bytes, got {0}")]
    Length(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seq: u32,
    pub timestamp_ms: u32,
    pub experiment_id: u16,
    pub tof_mm: u16,
    pub tof_valid: u8,
    pub servo_current_ma: [u16; 4],
    pub servo_command: [u16; 4],
    pub status: u16,
    pub grasp_delay_ms: u16,
}

impl ExperimentRecord {
    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[0..4].copy_from_slice(&self.seq.to_le_bytes());
        out[4..8].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        out[8..10].copy_from_slice(&self.experiment_id.to_le_bytes());
        out[10..12].copy_from_slice(&self.tof_mm.to_le_bytes());
        out[12] = self.tof_valid;
        for (i, c) in self.servo_current_ma.iter().enumerate() {
            out[13 + 2 * i..15 + 2 * i].copy_from_slice(&c.to_le_bytes());
        }
        for (i, c) in self.servo_command.iter().enumerate() {
            out[21 + 2 * i..23 + 2 * i].copy_from_slice(&c.to_le_bytes());
        }
        out[29..31].copy_from_slice(&self.status.to_le_bytes());
        out[31..33].copy_from_slice(&self.grasp_delay_ms.to_le_bytes());
        let crc = crc16(&out[..CRC_OFFSET]);
        out[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        if bytes.len() != RECORD_LEN {
            return Err(RecordError::Length(bytes.len()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let stored = u16_at(CRC_OFFSET);
        let computed = crc16(&bytes[..CRC_OFFSET]);
        if stored != computed {
            return Err(RecordError::Crc { stored, computed });
        }
        Ok(ExperimentRecord {
            seq: u32_at(0),
            timestamp_ms: u32_at(4),
            experiment_id: u16_at(8),
            tof_mm: u16_at(10),
            tof_valid: bytes[12],
            servo_current_ma: std::array::from_fn(|i| u16_at(13 + 2 * i)),
            servo_command: std::array::from_fn(|i| u16_at(21 + 2 * i)),
            status: u16_at(29),
            grasp_delay_ms: u16_at(31),
        })
    }
}
