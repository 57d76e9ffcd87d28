// Licensed under the Apache-2.0 license

//! Perching-arm controller bridge.
//!
//! Turns named host commands into bus transactions against the gripper's
//! virtual servo and pulls experiment logs back one record at a time.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::bus::{Bus, BusError, DEFAULT_GRIPPER_ID};
use crate::firmware::{
    Command, ExperimentRecord, GripperConfig, GripperDevice, RecordError, RECORD_LEN,
};
use crate::protocol::{Packet, StatusPacket};
use crate::registers::map;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacError {
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("{command} takes a parameter")]
    MissingParam { command: Command },
    #[error("{command} takes no parameter")]
    UnexpectedParam { command: Command },
    #[error("parameter {0} outside 0..=65535")]
    ParamRange(i64),
    #[error("delivery failed after retry: {0}")]
    Delivery(BusError),
    #[error("device reported error flags {flags:#04x}")]
    Device { flags: u8 },
    #[error("device is logging experiment {0}; close it before retrieval")]
    LoggingActive(u16),
    #[error("record {index} failed crc: {source}")]
    RecordCrc { index: usize, source: RecordError },
}

/// A validated command addressed to the gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostCommand {
    pub command: Command,
    pub param: Option<u16>,
}

impl HostCommand {
    pub fn new(command: Command, param: Option<u16>) -> Result<Self, PacError> {
        match (command.takes_param(), param) {
            (true, None) => Err(PacError::MissingParam { command }),
            (false, Some(_)) => Err(PacError::UnexpectedParam { command }),
            _ => Ok(HostCommand { command, param }),
        }
    }

    pub fn parse(name: &str, param: Option<i64>) -> Result<Self, PacError> {
        let command =
            Command::from_name(name).ok_or_else(|| PacError::UnknownCommand(name.to_string()))?;
        let param = param
            .map(|p| u16::try_from(p).map_err(|_| PacError::ParamRange(p)))
            .transpose()?;
        HostCommand::new(command, param)
    }

    pub fn simple(command: Command) -> Self {
        HostCommand::new(command, None).expect("command takes a parameter")
    }

    pub fn with_param(command: Command, param: u16) -> Self {
        HostCommand::new(command, Some(param)).expect("command takes no parameter")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ack {
    /// Command executed; STATUS read back afterwards.
    Done {
        status: u16,
    },
    Status {
        status: u16,
    },
    Record {
        bytes: Vec<u8>,
    },
}

/// Result of one slow-drip retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Drip {
    pub experiment: u16,
    pub records: Vec<[u8; RECORD_LEN]>,
}

impl Drip {
    /// `.geckolog` contents: records back to back.
    pub fn bytes(&self) -> Vec<u8> {
        self.records.iter().flatten().copied().collect()
    }

    pub fn decoded(&self) -> Vec<Result<ExperimentRecord, RecordError>> {
        self.records
            .iter()
            .map(|r| ExperimentRecord::decode(r))
            .collect()
    }

    pub fn verify(&self) -> Result<Vec<ExperimentRecord>, PacError> {
        self.decoded()
            .into_iter()
            .enumerate()
            .map(|(index, r)| r.map_err(|source| PacError::RecordCrc { index, source }))
            .collect()
    }

    /// JSON sidecar: every record decoded, with crc failures flagged.
    pub fn sidecar(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .decoded()
            .into_iter()
            .enumerate()
            .map(|(index, r)| match r {
                Ok(rec) => json!({ "index": index, "crc_ok": true, "record": rec }),
                Err(e) => json!({ "index": index, "crc_ok": false, "error": e.to_string() }),
            })
            .collect();
        json!({
            "experiment": self.experiment,
            "record_len": RECORD_LEN,
            "count": self.records.len(),
            "records": rows,
        })
    }
}

pub struct PacBridge {
    bus: Bus,
    gripper_id: u8,
}

impl PacBridge {
    pub fn new(bus: Bus, gripper_id: u8) -> Self {
        PacBridge { bus, gripper_id }
    }

    /// Joint stubs plus a gripper at `gripper_id`.
    pub fn with_gripper(gripper_id: u8, config: GripperConfig) -> Self {
        let mut bus = Bus::with_joint_stubs();
        bus.attach(gripper_id, Box::new(GripperDevice::new(gripper_id, config)));
        PacBridge::new(bus, gripper_id)
    }

    pub fn gripper_id(&self) -> u8 {
        self.gripper_id
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    pub fn gripper(&self) -> &GripperDevice {
        self.bus
            .device(self.gripper_id)
            .expect("gripper attached at its id")
    }

    pub fn gripper_mut(&mut self) -> &mut GripperDevice {
        self.bus
            .device_mut(self.gripper_id)
            .expect("gripper attached at its id")
    }

    fn transact(&mut self, request: &Packet) -> Result<StatusPacket, PacError> {
        let reply = match self.bus.transact(request) {
            Err(BusError::Timeout(_)) => self.bus.transact(request),
            other => other,
        }
        .map_err(PacError::Delivery)?
        .expect("unicast request");
        if reply.error_flags != 0 {
            return Err(PacError::Device {
                flags: reply.error_flags,
            });
        }
        Ok(reply)
    }

    fn read(&mut self, address: u8, len: u8) -> Result<Vec<u8>, PacError> {
        Ok(self
            .transact(&Packet::read(self.gripper_id, address, len))?
            .params)
    }

    fn read_u16(&mut self, address: u8) -> Result<u16, PacError> {
        let b = self.read(address, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn read_status(&mut self) -> Result<u16, PacError> {
        self.read_u16(map::STATUS)
    }

    pub fn dispatch(&mut self, cmd: &HostCommand) -> Result<Ack, PacError> {
        match cmd.command {
            Command::Status => Ok(Ack::Status {
                status: self.read_status()?,
            }),
            Command::Record => Ok(Ack::Record {
                bytes: self.read(map::RECORD, map::RECORD_LEN)?,
            }),
            command => {
                let [lo, hi] = cmd.param.unwrap_or(0).to_le_bytes();
                self.transact(&Packet::write(
                    self.gripper_id,
                    map::COMMAND,
                    &[command.code(), lo, hi],
                ))?;
                Ok(Ack::Done {
                    status: self.read_status()?,
                })
            }
        }
    }

    /// Writes a raw command code, bypassing host-side validation.
    pub fn dispatch_raw(&mut self, code: u8, param: u16) -> Result<Ack, PacError> {
        let [lo, hi] = param.to_le_bytes();
        self.transact(&Packet::write(
            self.gripper_id,
            map::COMMAND,
            &[code, lo, hi],
        ))?;
        Ok(Ack::Done {
            status: self.read_status()?,
        })
    }

    /// Retrieves one experiment file through the RECORD window.
    pub fn slow_drip(&mut self, experiment: u16) -> Result<Drip, PacError> {
        let current = self.read_u16(map::EXPERIMENT)?;
        if current != 0 {
            return Err(PacError::LoggingActive(current));
        }
        self.dispatch(&HostCommand::with_param(Command::OpenExp, experiment))?;
        let mut records = Vec::new();
        loop {
            let flags = self.read(map::DRIP_FLAGS, 1)?[0];
            if flags & map::DRIP_FILE_OPEN == 0 || flags & map::DRIP_END != 0 {
                break;
            }
            let bytes = self.read(map::RECORD, map::RECORD_LEN)?;
            records.push(bytes.try_into().expect("RECORD window is 35 bytes"));
            self.dispatch(&HostCommand::with_param(Command::NextRecord, 1))?;
        }
        self.dispatch(&HostCommand::simple(Command::CloseExp))?;
        Ok(Drip {
            experiment,
            records,
        })
    }
}

impl Default for PacBridge {
    fn default() -> Self {
        PacBridge::with_gripper(DEFAULT_GRIPPER_ID, GripperConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::TofSample;

    fn log_experiment(bridge: &mut PacBridge, id: u16, n: usize) {
        bridge
            .dispatch(&HostCommand::with_param(Command::Mark, id))
            .unwrap();
        let fw = bridge.gripper_mut().firmware_mut();
        for _ in 0..n {
            let t = fw.now_ms() + 50;
            fw.tick(TofSample::from_reading(60, t), [100, 100, 0, 0], t);
        }
        bridge
            .dispatch(&HostCommand::with_param(Command::Mark, 0))
            .unwrap();
    }

    #[test]
    fn close_shows_engaged_bits() {
        let mut b = PacBridge::default();
        let ack = b.dispatch(&HostCommand::simple(Command::Close)).unwrap();
        assert_eq!(ack, Ack::Done { status: 0x0003 });
        assert_eq!(b.read_status().unwrap() & 0x3, 0x3);
    }

    #[test]
    fn set_delay_reaches_firmware() {
        let mut b = PacBridge::default();
        b.dispatch(&HostCommand::with_param(Command::SetDelay, 300))
            .unwrap();
        assert_eq!(b.gripper().firmware().state().grasp_delay_ms, 300);
    }

    #[test]
    fn bad_commands_rejected_before_the_bus() {
        assert_eq!(
            HostCommand::parse("FLY", None),
            Err(PacError::UnknownCommand("FLY".into()))
        );
        assert!(matches!(
            HostCommand::parse("SET DELAY", None),
            Err(PacError::MissingParam { .. })
        ));
        assert!(matches!(
            HostCommand::parse("OPEN", Some(3)),
            Err(PacError::UnexpectedParam { .. })
        ));
        assert_eq!(
            HostCommand::parse("MARK", Some(70000)),
            Err(PacError::ParamRange(70000))
        );
    }

    #[test]
    fn unknown_code_on_the_wire_is_a_command_error() {
        let mut b = PacBridge::default();
        assert_eq!(
            b.dispatch_raw(0x77, 0),
            Err(PacError::Device {
                flags: crate::protocol::error_bits::INSTRUCTION
            })
        );
    }

    #[test]
    fn single_timeout_is_retried() {
        let mut b = PacBridge::default();
        b.bus_mut().drop_next_requests(1);
        assert!(b
            .dispatch(&HostCommand::simple(Command::EnableAuto))
            .is_ok());
        b.bus_mut().drop_next_requests(2);
        assert!(matches!(
            b.dispatch(&HostCommand::simple(Command::DisableAuto)),
            Err(PacError::Delivery(BusError::Timeout(_)))
        ));
    }

    #[test]
    fn drip_hundred_records() {
        let mut b = PacBridge::default();
        log_experiment(&mut b, 4, 100);
        let drip = b.slow_drip(4).unwrap();
        let recs = drip.verify().unwrap();
        assert_eq!(recs.len(), 100);
        assert!(recs.iter().enumerate().all(|(i, r)| r.seq == i as u32));
        assert_eq!(
            drip.bytes(),
            b.gripper().firmware().log().export(4).unwrap()
        );
    }

    #[test]
    fn drip_missing_experiment_is_empty() {
        let mut b = PacBridge::default();
        log_experiment(&mut b, 4, 3);
        assert!(b.slow_drip(5).unwrap().records.is_empty());
    }

    #[test]
    fn drip_refused_while_logging() {
        let mut b = PacBridge::default();
        b.dispatch(&HostCommand::with_param(Command::Mark, 2))
            .unwrap();
        assert_eq!(b.slow_drip(2), Err(PacError::LoggingActive(2)));
    }

    #[test]
    fn corrupted_record_reported_by_index() {
        let mut b = PacBridge::default();
        log_experiment(&mut b, 8, 10);
        assert!(b
            .gripper_mut()
            .firmware_mut()
            .log_mut()
            .corrupt(8, 6, 12, 0x40));
        let drip = b.slow_drip(8).unwrap();
        assert_eq!(drip.records.len(), 10);
        assert!(matches!(
            drip.verify(),
            Err(PacError::RecordCrc { index: 6, .. })
        ));
        let side = drip.sidecar();
        assert_eq!(side["records"][6]["crc_ok"], false);
        assert_eq!(side["records"][5]["crc_ok"], true);
    }
}
