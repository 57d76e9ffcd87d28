// Licensed under the Apache-2.0 license

//! Half-duplex bus shared by the gripper and the perching-arm joint servos.
//!
//! Requests travel as encoded bytes: the bus decodes them on the device side,
//! lets the addressed device act, and encodes its status reply. Only one
//! transaction is in flight at a time.

use std::any::Any;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::protocol::{
    error_bits, EncodeError, FrameError, Instruction, Packet, StatusPacket, BROADCAST_ID,
};
use crate::registers::{Access, RegisterError, RegisterFile};

pub const JOINT_SERVO_IDS: [u8; 2] = [0x01, 0x02];
pub const DEFAULT_GRIPPER_ID: u8 = 0x20;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DeviceError {
    #[error("address out of range")]
    Address,
    #[error("instruction error")]
    Instruction,
}

impl DeviceError {
    pub fn bits(self) -> u8 {
        match self {
            DeviceError::Address => error_bits::ADDRESS,
            DeviceError::Instruction => error_bits::INSTRUCTION,
        }
    }
}

impl From<RegisterError> for DeviceError {
    fn from(_: RegisterError) -> Self {
        DeviceError::Address
    }
}

/// Anything that answers at a bus id.
pub trait BusDevice: Any + Send {
    fn read(&mut self, start: u8, len: u8) -> Result<Vec<u8>, DeviceError>;
    /// Stores `data` and runs any side effects of the write.
    fn write(&mut self, start: u8, data: &[u8]) -> Result<(), DeviceError>;
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("no response from device {0:#04x}")]
    Timeout(u8),
    #[error("no response: request frame unreadable")]
    Unreadable,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("malformed response: {0}")]
    BadResponse(FrameError),
}

#[derive(Default)]
pub struct Bus {
    devices: BTreeMap<u8, Box<dyn BusDevice>>,
    drop_requests: u32,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bus with the two inert joint servos already attached.
    pub fn with_joint_stubs() -> Self {
        let mut bus = Bus::new();
        for id in JOINT_SERVO_IDS {
            bus.attach(id, Box::new(JointServoStub::new(id)));
        }
        bus
    }

    pub fn attach(&mut self, id: u8, device: Box<dyn BusDevice>) -> Option<Box<dyn BusDevice>> {
        assert!(id < BROADCAST_ID, "id {id:#04x} is reserved");
        self.devices.insert(id, device)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.devices.keys().copied()
    }

    pub fn device<T: BusDevice>(&self, id: u8) -> Option<&T> {
        self.devices.get(&id)?.as_any().downcast_ref()
    }

    pub fn device_mut<T: BusDevice>(&mut self, id: u8) -> Option<&mut T> {
        self.devices.get_mut(&id)?.as_any_mut().downcast_mut()
    }

    /// Loses the next `n` unicast requests before any device sees them.
    pub fn drop_next_requests(&mut self, n: u32) {
        self.drop_requests = n;
    }

    /// Typed transaction. `Ok(None)` for broadcasts.
    pub fn transact(&mut self, request: &Packet) -> Result<Option<StatusPacket>, BusError> {
        let bytes = request.encode()?;
        match self.transact_bytes(&bytes)? {
            None => Ok(None),
            Some(reply) => {
                let (status, _) = StatusPacket::decode(&reply).map_err(BusError::BadResponse)?;
                Ok(Some(status))
            }
        }
    }

    /// Byte-level transaction: one request frame in, at most one status frame
    /// out.
    pub fn transact_bytes(&mut self, request: &[u8]) -> Result<Option<Vec<u8>>, BusError> {
        let reply = match Packet::decode(request) {
            Ok((packet, _)) => {
                if packet.is_broadcast() {
                    self.broadcast(&packet);
                    return Ok(None);
                }
                if self.drop_requests > 0 {
                    self.drop_requests -= 1;
                    return Err(BusError::Timeout(packet.device_id));
                }
                let id = packet.device_id;
                let device = self.devices.get_mut(&id).ok_or(BusError::Timeout(id))?;
                execute(device.as_mut(), id, &packet)
            }
            Err(FrameError::Checksum { device_id, .. }) => {
                self.error_reply(device_id, error_bits::CHECKSUM)?
            }
            Err(FrameError::Malformed { device_id, .. }) => {
                self.error_reply(device_id, error_bits::INSTRUCTION)?
            }
            Err(FrameError::NeedMoreBytes { .. }) => return Err(BusError::Unreadable),
        };
        Ok(Some(reply.encode()?))
    }

    fn error_reply(&self, device_id: u8, bits: u8) -> Result<StatusPacket, BusError> {
        if device_id == BROADCAST_ID || !self.devices.contains_key(&device_id) {
            return Err(BusError::Timeout(device_id));
        }
        Ok(StatusPacket::error(device_id, bits))
    }

    fn broadcast(&mut self, packet: &Packet) {
        if packet.instruction == Instruction::Write {
            for device in self.devices.values_mut() {
                let _ = device.write(packet.params[0], &packet.params[1..]);
            }
        }
    }
}

fn execute(device: &mut dyn BusDevice, id: u8, packet: &Packet) -> StatusPacket {
    let result = match packet.instruction {
        Instruction::Ping => Ok(Vec::new()),
        Instruction::Read => device.read(packet.params[0], packet.params[1]),
        Instruction::Write => device
            .write(packet.params[0], &packet.params[1..])
            .map(|_| Vec::new()),
    };
    match result {
        Ok(params) => StatusPacket::ok(id, params),
        Err(e) => StatusPacket::error(id, e.bits()),
    }
}

/// Perching-arm joint servo placeholder: a plain read-write register file.
pub struct JointServoStub {
    registers: RegisterFile,
}

impl JointServoStub {
    pub const SIZE: usize = 0x32;

    pub fn new(id: u8) -> Self {
        let mut registers = RegisterFile::new(Self::SIZE, Access::ReadWrite);
        registers.store(0x03, &[id]);
        registers.set_access(0x00, 0x04, Access::ReadOnly);
        JointServoStub { registers }
    }
}

impl BusDevice for JointServoStub {
    fn read(&mut self, start: u8, len: u8) -> Result<Vec<u8>, DeviceError> {
        Ok(self.registers.read(start as usize, len as usize)?.to_vec())
    }

    fn write(&mut self, start: u8, data: &[u8]) -> Result<(), DeviceError> {
        Ok(self.registers.write(start as usize, data)?)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
