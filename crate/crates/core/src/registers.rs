// Licensed under the Apache-2.0 license

//! Byte-addressed register storage and the gripper's register map.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegisterError {
    #[error("access {start:#04x}+{len} outside register file of {size} bytes")]
    OutOfRange {
        start: usize,
        len: usize,
        size: usize,
    },
    #[error("register {0:#04x} is read-only")]
    ReadOnly(usize),
}

/// Contiguous register space. Accesses are all-or-nothing: a request that
/// crosses the end of the file or touches a read-only byte (for writes)
/// changes nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterFile {
    bytes: Vec<u8>,
    access: Vec<Access>,
}

impl RegisterFile {
    pub fn new(size: usize, default_access: Access) -> Self {
        RegisterFile {
            bytes: vec![0; size],
            access: vec![default_access; size],
        }
    }

    pub fn size(&self) -> usize {
        self.bytes.len()
    }

    pub fn set_access(&mut self, start: usize, len: usize, access: Access) {
        self.access[start..start + len].fill(access);
    }

    fn check(&self, start: usize, len: usize) -> Result<(), RegisterError> {
        match start.checked_add(len) {
            Some(end) if end <= self.bytes.len() => Ok(()),
            _ => Err(RegisterError::OutOfRange {
                start,
                len,
                size: self.bytes.len(),
            }),
        }
    }

    pub fn read(&self, start: usize, len: usize) -> Result<&[u8], RegisterError> {
        self.check(start, len)?;
        Ok(&self.bytes[start..start + len])
    }

    /// Bus-side write; honours access modes.
    pub fn write(&mut self, start: usize, data: &[u8]) -> Result<(), RegisterError> {
        self.check(start, data.len())?;
        if let Some(i) = (start..start + data.len()).find(|&i| self.access[i] == Access::ReadOnly) {
            return Err(RegisterError::ReadOnly(i));
        }
        self.bytes[start..start + data.len()].copy_from_slice(data);
        Ok(())
    }

    /// Device-side store; ignores access modes. Panics on out-of-range, since
    /// the owning device lays out its own map.
    pub fn store(&mut self, start: usize, data: &[u8]) {
        self.bytes[start..start + data.len()].copy_from_slice(data);
    }

    pub fn store_u16(&mut self, start: usize, value: u16) {
        self.store(start, &value.to_le_bytes());
    }

    pub fn load_u16(&self, start: usize) -> u16 {
        u16::from_le_bytes([self.bytes[start], self.bytes[start + 1]])
    }
}

/// Addresses of the gripper virtual servo. Multi-byte values are
/// little-endian.
pub mod map {
    pub const SIZE: usize = 0x80;

    pub const MODEL_NUMBER: u8 = 0x00;
    pub const FIRMWARE_VERSION: u8 = 0x02;
    pub const DEVICE_ID: u8 = 0x03;

    pub const TOF_MM: u8 = 0x10;
    pub const TOF_VALID: u8 = 0x12;
    pub const SERVO_CURRENT: u8 = 0x14;
    pub const SERVO_COMMAND: u8 = 0x1C;

    pub const STATUS: u8 = 0x30;
    pub const DRIP_FLAGS: u8 = 0x32;
    pub const DRIP_CURSOR: u8 = 0x34;
    pub const DRIP_COUNT: u8 = 0x36;
    pub const GRASP_DELAY: u8 = 0x38;
    pub const EXPERIMENT: u8 = 0x3A;

    pub const COMMAND: u8 = 0x40;
    pub const COMMAND_PARAM: u8 = 0x41;

    pub const RECORD: u8 = 0x50;
    pub const RECORD_LEN: u8 = 35;

    pub const MODEL: u16 = 0x4743;
    pub const VERSION: u8 = 1;

    /// `DRIP_FLAGS` bits.
    pub const DRIP_END: u8 = 1 << 0;
    pub const DRIP_FILE_OPEN: u8 = 1 << 1;
}

pub struct RegisterDoc {
    pub address: u8,
    pub width: u8,
    pub access: Access,
    pub name: &'static str,
    pub meaning: &'static str,
}

pub const GRIPPER_REGISTERS: &[RegisterDoc] = &[
    RegisterDoc { address: map::MODEL_NUMBER, width: 2, access: Access::ReadOnly, name: "MODEL_NUMBER", meaning: "0x4743" },
    RegisterDoc { address: map::FIRMWARE_VERSION, width: 1, access: Access::ReadOnly, name: "FIRMWARE_VERSION", meaning: "firmware revision" },
    RegisterDoc { address: map::DEVICE_ID, width: 1, access: Access::ReadOnly, name: "DEVICE_ID", meaning: "bus id of this device" },
    RegisterDoc { address: map::TOF_MM, width: 2, access: Access::ReadOnly, name: "TOF_MM", meaning: "last ToF range, mm" },
    RegisterDoc { address: map::TOF_VALID, width: 1, access: Access::ReadOnly, name: "TOF_VALID", meaning: "1 if TOF_MM is within 5-100 mm" },
    RegisterDoc { address: map::SERVO_CURRENT, width: 8, access: Access::ReadOnly, name: "SERVO_CURRENT", meaning: "4 x u16 servo current, mA (load A, load B, release, wrist)" },
    RegisterDoc { address: map::SERVO_COMMAND, width: 8, access: Access::ReadOnly, name: "SERVO_COMMAND", meaning: "4 x u16 commanded servo position, 0-1000" },
    RegisterDoc { address: map::STATUS, width: 2, access: Access::ReadOnly, name: "STATUS", meaning: "bit0 pair A engaged, bit1 pair B engaged, bit2 wrist locked, bit3 auto mode, bit4 experiment logging; bits 5-15 zero" },
    RegisterDoc { address: map::DRIP_FLAGS, width: 1, access: Access::ReadOnly, name: "DRIP_FLAGS", meaning: "bit0 end of file reached, bit1 experiment file open for reading" },
    RegisterDoc { address: map::DRIP_CURSOR, width: 2, access: Access::ReadOnly, name: "DRIP_CURSOR", meaning: "index of the record shown in RECORD" },
    RegisterDoc { address: map::DRIP_COUNT, width: 2, access: Access::ReadOnly, name: "DRIP_COUNT", meaning: "records in the open experiment file" },
    RegisterDoc { address: map::GRASP_DELAY, width: 2, access: Access::ReadOnly, name: "GRASP_DELAY", meaning: "grasp delay, ms" },
    RegisterDoc { address: map::EXPERIMENT, width: 2, access: Access::ReadOnly, name: "EXPERIMENT", meaning: "experiment being logged, 0 = none" },
    RegisterDoc { address: map::COMMAND, width: 1, access: Access::ReadWrite, name: "COMMAND", meaning: "writing a command code executes it" },
    RegisterDoc { address: map::COMMAND_PARAM, width: 2, access: Access::ReadWrite, name: "COMMAND_PARAM", meaning: "parameter used by the next command write" },
    RegisterDoc { address: map::RECORD, width: map::RECORD_LEN, access: Access::ReadOnly, name: "RECORD", meaning: "current record of the open experiment file, zeros if none" },
];

/// Markdown table of the gripper register map and command codes.
pub fn register_map_markdown() -> String {
    let mut out = String::from("# Gripper register map\n\n");
    let _ = writeln!(
        out,
        "Register file size: {} bytes. Unlisted addresses are read-only and read as zero.\n",
        map::SIZE
    );
    out.push_str("| Address | Width | Access | Name | Meaning |\n|---|---|---|---|---|\n");
    for r in GRIPPER_REGISTERS {
        let access = match r.access {
            Access::ReadOnly => "R",
            Access::ReadWrite => "RW",
        };
        let _ = writeln!(
            out,
            "| `{:#04x}` | {} | {} | {} | {} |",
            r.address, r.width, access, r.name, r.meaning
        );
    }
    out.push_str("\n## Command codes\n\nWrite `code` to COMMAND, or `code, param_lo, param_hi` starting at COMMAND.\n\n");
    out.push_str("| Code | Command | Parameter |\n|---|---|---|\n");
    for c in crate::firmware::Command::ALL {
        let param = if c.takes_param() { "u16" } else { "-" };
        let _ = writeln!(out, "| `{:#04x}` | {} | {} |", c.code(), c.name(), param);
    }
    out
}
