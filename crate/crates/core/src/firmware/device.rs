// Licensed under the Apache-2.0 license

use std::any::Any;

use crate::bus::{BusDevice, DeviceError};
use crate::registers::{map, Access, RegisterFile};

use super::{Gripper, GripperConfig};

/// The gripper as seen from the bus: firmware behind a register file.
///
/// Read-only registers are refreshed from firmware state before every read.
/// A write that covers `COMMAND` executes the stored code with the
/// parameter currently held in `COMMAND_PARAM`.
#[derive(Debug, Clone)]
pub struct GripperDevice {
    id: u8,
    firmware: Gripper,
    registers: RegisterFile,
}

impl GripperDevice {
    pub fn new(id: u8, config: GripperConfig) -> Self {
        let mut registers = RegisterFile::new(map::SIZE, Access::ReadOnly);
        registers.set_access(map::COMMAND as usize, 3, Access::ReadWrite);
        registers.store_u16(map::MODEL_NUMBER as usize, map::MODEL);
        registers.store(map::FIRMWARE_VERSION as usize, &[map::VERSION]);
        registers.store(map::DEVICE_ID as usize, &[id]);
        let mut dev = GripperDevice {
            id,
            firmware: Gripper::new(config),
            registers,
        };
        dev.sync_registers();
        dev
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn firmware(&self) -> &Gripper {
        &self.firmware
    }

    pub fn firmware_mut(&mut self) -> &mut Gripper {
        &mut self.firmware
    }

    pub fn registers(&self) -> &RegisterFile {
        &self.registers
    }

    fn sync_registers(&mut self) {
        let fw = &self.firmware;
        let rf = &mut self.registers;
        let tof = fw.last_tof();
        rf.store_u16(map::TOF_MM as usize, tof.distance_mm);
        rf.store(map::TOF_VALID as usize, &[tof.valid as u8]);
        for (i, c) in fw.last_currents().iter().enumerate() {
            rf.store_u16(map::SERVO_CURRENT as usize + 2 * i, *c);
        }
        for (i, c) in fw.state().servo_commands.iter().enumerate() {
            rf.store_u16(map::SERVO_COMMAND as usize + 2 * i, *c);
        }
        rf.store_u16(map::STATUS as usize, fw.status());
        let log = fw.log();
        let mut flags = 0;
        if log.at_end() {
            flags |= map::DRIP_END;
        }
        if log.read_open() {
            flags |= map::DRIP_FILE_OPEN;
        }
        rf.store(map::DRIP_FLAGS as usize, &[flags]);
        rf.store_u16(map::DRIP_CURSOR as usize, log.cursor() as u16);
        rf.store_u16(map::DRIP_COUNT as usize, log.open_len() as u16);
        rf.store_u16(map::GRASP_DELAY as usize, fw.state().grasp_delay_ms);
        rf.store_u16(map::EXPERIMENT as usize, fw.state().current_experiment);
        rf.store(map::RECORD as usize, &log.current_record());
    }
}

impl BusDevice for GripperDevice {
    fn read(&mut self, start: u8, len: u8) -> Result<Vec<u8>, DeviceError> {
        self.sync_registers();
        Ok(self.registers.read(start as usize, len as usize)?.to_vec())
    }

    fn write(&mut self, start: u8, data: &[u8]) -> Result<(), DeviceError> {
        self.registers.write(start as usize, data)?;
        let end = start as usize + data.len();
        let result = if (start as usize..end).contains(&(map::COMMAND as usize)) {
            let code = self.registers.read(map::COMMAND as usize, 1)?[0];
            let param = self.registers.load_u16(map::COMMAND_PARAM as usize);
            self.firmware
                .execute_code(code, param)
                .map_err(|_| DeviceError::Instruction)
        } else {
            Ok(())
        };
        self.sync_registers();
        result
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
