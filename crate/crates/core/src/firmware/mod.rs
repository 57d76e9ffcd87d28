// Licensed under the Apache-2.0 license

//! Gripper firmware: command execution, the auto-grasp trigger and the
//! on-board experiment log.
//!
//! The firmware is a deterministic state machine. Time only moves in
//! [`Gripper::tick`]; commands act at the time of the most recent tick.

mod device;
mod log;
mod record;
mod ttc;

pub use device::GripperDevice;
pub use log::ExperimentLog;
pub use record::{crc16, ExperimentRecord, RecordError, RECORD_LEN};
pub use ttc::{estimate_time_to_contact, ApproachTracker, TofSample, TOF_MAX_MM, TOF_MIN_MM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Servo command range. Load and wrist servos sit at 0 when slack.
pub const SERVO_FULL: u16 = 1000;

pub mod status_bits {
    pub const PAIR_A: u16 = 1 << 0;
    pub const PAIR_B: u16 = 1 << 1;
    pub const WRIST_LOCKED: u16 = 1 << 2;
    pub const AUTO: u16 = 1 << 3;
    pub const LOGGING: u16 = 1 << 4;
}

#[repr(u8)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Open = 0x01,
    Close = 0x02,
    ToggleAuto = 0x03,
    Mark = 0x04,
    Engage = 0x05,
    Disengage = 0x06,
    Lock = 0x07,
    Unlock = 0x08,
    EnableAuto = 0x09,
    DisableAuto = 0x0A,
    SetDelay = 0x0B,
    /// Register query; writing it is a no-op.
    Status = 0x0C,
    /// Register query; writing it is a no-op.
    Record = 0x0D,
    OpenExp = 0x0E,
    CloseExp = 0x0F,
    NextRecord = 0x10,
}

impl Command {
    pub const ALL: [Command; 16] = [
        Command::Open,
        Command::Close,
        Command::ToggleAuto,
        Command::Mark,
        Command::Engage,
        Command::Disengage,
        Command::Lock,
        Command::Unlock,
        Command::EnableAuto,
        Command::DisableAuto,
        Command::SetDelay,
        Command::Status,
        Command::Record,
        Command::OpenExp,
        Command::CloseExp,
        Command::NextRecord,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Open => "OPEN",
            Command::Close => "CLOSE",
            Command::ToggleAuto => "TOGGLE AUTO",
            Command::Mark => "MARK",
            Command::Engage => "ENGAGE",
            Command::Disengage => "DISENGAGE",
            Command::Lock => "LOCK",
            Command::Unlock => "UNLOCK",
            Command::EnableAuto => "ENABLE AUTO",
            Command::DisableAuto => "DISABLE AUTO",
            Command::SetDelay => "SET DELAY",
            Command::Status => "STATUS",
            Command::Record => "RECORD",
            Command::OpenExp => "OPEN EXP",
            Command::CloseExp => "CLOSE EXP",
            Command::NextRecord => "NEXT RECORD",
        }
    }

    /// Accepts the table names, case-insensitive, with spaces, dashes or
    /// underscores between words.
    pub fn from_name(name: &str) -> Option<Command> {
        let norm: String = name
            .trim()
            .chars()
            .map(|c| match c {
                '_' | '-' => ' ',
                c => c.to_ascii_uppercase(),
            })
            .collect();
        let norm = norm.split_whitespace().collect::<Vec<_>>().join(" ");
        Command::ALL.into_iter().find(|c| c.name() == norm)
    }

    pub fn takes_param(self) -> bool {
        matches!(
            self,
            Command::SetDelay | Command::Mark | Command::OpenExp | Command::NextRecord
        )
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("unknown command code {0:#04x}")]
pub struct UnknownCommand(pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperConfig {
    pub tick_ms: u32,
    pub grasp_delay_ms: u16,
    pub wrist_ramp_ms: u32,
    pub release_pulse_ms: u32,
    pub arm_threshold_mm: u16,
    pub auto_mode: bool,
}

impl Default for GripperConfig {
    fn default() -> Self {
        GripperConfig {
            tick_ms: 50,
            grasp_delay_ms: 250,
            wrist_ramp_ms: 500,
            release_pulse_ms: 200,
            arm_threshold_mm: 40,
            auto_mode: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AutoFsm {
    Idle,
    Armed,
    Scheduled { fire_at_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WristTimer {
    pub lock: bool,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WristRamp {
    from: u16,
    to: u16,
    start_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GripperState {
    pub adhesive_engaged: [bool; 2],
    pub wrist_locked: bool,
    pub auto_mode: bool,
    pub grasp_delay_ms: u16,
    pub current_experiment: u16,
    pub auto_fsm: AutoFsm,
    pub wrist_timer: Option<WristTimer>,
    /// Load A, load B, release, wrist.
    pub servo_commands: [u16; 4],
}

impl GripperState {
    pub fn status_register(&self) -> u16 {
        let mut s = 0;
        if self.adhesive_engaged[0] {
            s |= status_bits::PAIR_A;
        }
        if self.adhesive_engaged[1] {
            s |= status_bits::PAIR_B;
        }
        if self.wrist_locked {
            s |= status_bits::WRIST_LOCKED;
        }
        if self.auto_mode {
            s |= status_bits::AUTO;
        }
        if self.current_experiment != 0 {
            s |= status_bits::LOGGING;
        }
        s
    }
}

pub fn status_register(state: &GripperState) -> u16 {
    state.status_register()
}

/// One auto-grasp decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AutoTrigger {
    pub armed_at_ms: u64,
    pub ttc_s: f64,
    pub fire_at_ms: u64,
    pub fired_at_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Gripper {
    config: GripperConfig,
    state: GripperState,
    log: ExperimentLog,
    tracker: ApproachTracker,
    now_ms: u64,
    wrist_ramp: Option<WristRamp>,
    release_until_ms: Option<u64>,
    last_tof: TofSample,
    last_currents: [u16; 4],
    trigger: Option<AutoTrigger>,
}

impl Gripper {
    pub fn new(config: GripperConfig) -> Self {
        let state = GripperState {
            adhesive_engaged: [false; 2],
            wrist_locked: false,
            auto_mode: config.auto_mode,
            grasp_delay_ms: config.grasp_delay_ms,
            current_experiment: 0,
            auto_fsm: AutoFsm::Idle,
            wrist_timer: None,
            servo_commands: [0; 4],
        };
        Gripper {
            config,
            state,
            log: ExperimentLog::default(),
            tracker: ApproachTracker::default(),
            now_ms: 0,
            wrist_ramp: None,
            release_until_ms: None,
            last_tof: TofSample::invalid(0),
            last_currents: [0; 4],
            trigger: None,
        }
    }

    pub fn config(&self) -> &GripperConfig {
        &self.config
    }

    pub fn state(&self) -> &GripperState {
        &self.state
    }

    pub fn status(&self) -> u16 {
        self.state.status_register()
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn log(&self) -> &ExperimentLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut ExperimentLog {
        &mut self.log
    }

    pub fn last_tof(&self) -> TofSample {
        self.last_tof
    }

    pub fn last_currents(&self) -> [u16; 4] {
        self.last_currents
    }

    pub fn last_trigger(&self) -> Option<AutoTrigger> {
        self.trigger
    }

    pub fn execute_code(&mut self, code: u8, param: u16) -> Result<(), UnknownCommand> {
        let cmd = Command::from_code(code).ok_or(UnknownCommand(code))?;
        self.execute(cmd, param);
        Ok(())
    }

    pub fn execute(&mut self, cmd: Command, param: u16) {
        let now = self.now_ms;
        match cmd {
            Command::Open => {
                self.disengage();
                self.set_auto(false);
                self.state.wrist_timer = Some(WristTimer {
                    lock: false,
                    at_ms: now + self.state.grasp_delay_ms as u64,
                });
            }
            Command::Close => self.close_sequence(),
            Command::ToggleAuto => self.set_auto(!self.state.auto_mode),
            Command::EnableAuto => self.set_auto(true),
            Command::DisableAuto => self.set_auto(false),
            Command::Mark => {
                self.log.mark(param);
                self.state.current_experiment = self.log.logging().unwrap_or(0);
            }
            Command::Engage => self.engage(),
            Command::Disengage => self.disengage(),
            Command::Lock => self.start_wrist(true, now),
            Command::Unlock => self.start_wrist(false, now),
            Command::SetDelay => self.state.grasp_delay_ms = param,
            Command::Status | Command::Record => {}
            Command::OpenExp => self.log.open_for_read(param),
            Command::CloseExp => self.log.close_read(),
            Command::NextRecord => self.log.seek(param),
        }
        self.refresh_servos();
    }

    /// One control-loop period: advance timers, run the auto-grasp logic and
    /// append a log record if an experiment is open.
    pub fn tick(
        &mut self,
        tof: TofSample,
        currents: [u16; 4],
        now_ms: u64,
    ) -> Option<[u8; RECORD_LEN]> {
        self.advance_to(now_ms);
        self.last_tof = tof;
        self.last_currents = currents;
        self.tracker.push(&tof);
        self.auto_grasp(&tof);
        self.refresh_servos();

        if self.state.current_experiment == 0 {
            return None;
        }
        self.log.append(ExperimentRecord {
            seq: 0,
            timestamp_ms: now_ms as u32,
            experiment_id: 0,
            tof_mm: tof.distance_mm,
            tof_valid: tof.valid as u8,
            servo_current_ma: currents,
            servo_command: self.state.servo_commands,
            status: self.status(),
            grasp_delay_ms: self.state.grasp_delay_ms,
        })
    }

    /// Moves the clock forward, firing any wrist timers that fall due.
    pub fn advance_to(&mut self, now_ms: u64) {
        debug_assert!(now_ms >= self.now_ms);
        self.now_ms = now_ms.max(self.now_ms);
        if let Some(t) = self.state.wrist_timer {
            if t.at_ms <= self.now_ms {
                self.state.wrist_timer = None;
                self.settle_ramp(t.at_ms);
                self.begin_ramp(t.lock, t.at_ms);
            }
        }
        self.settle_ramp(self.now_ms);
        if self.release_until_ms.is_some_and(|t| t <= self.now_ms) {
            self.release_until_ms = None;
        }
        self.refresh_servos();
    }

    fn auto_grasp(&mut self, tof: &TofSample) {
        let now = self.now_ms;
        let half_tick = self.config.tick_ms as u64 / 2;
        if let AutoFsm::Scheduled { fire_at_ms } = self.state.auto_fsm {
            if now + half_tick >= fire_at_ms {
                self.fire();
            }
            return;
        }
        if !self.state.auto_mode || self.state.adhesive_engaged.iter().any(|&e| e) {
            self.state.auto_fsm = AutoFsm::Idle;
            return;
        }
        if !(tof.valid && tof.distance_mm < self.config.arm_threshold_mm) {
            self.state.auto_fsm = AutoFsm::Idle;
            return;
        }
        if self.state.auto_fsm == AutoFsm::Idle {
            self.state.auto_fsm = AutoFsm::Armed;
            self.trigger = None;
        }
        let armed_at_ms = self.trigger.map_or(now, |t| t.armed_at_ms);
        let Some(ttc) = self.tracker.time_to_contact() else {
            return;
        };
        let fire_at_ms = now + (ttc * 1000.0).round() as u64 + self.state.grasp_delay_ms as u64;
        self.trigger = Some(AutoTrigger {
            armed_at_ms,
            ttc_s: ttc,
            fire_at_ms,
            fired_at_ms: None,
        });
        self.state.auto_fsm = AutoFsm::Scheduled { fire_at_ms };
        if now + half_tick >= fire_at_ms {
            self.fire();
        }
    }

    fn fire(&mut self) {
        self.state.auto_fsm = AutoFsm::Idle;
        if let Some(t) = self.trigger.as_mut() {
            t.fired_at_ms = Some(self.now_ms);
        }
        self.close_sequence();
    }

    fn close_sequence(&mut self) {
        self.engage();
        self.state.wrist_timer = Some(WristTimer {
            lock: true,
            at_ms: self.now_ms + self.state.grasp_delay_ms as u64,
        });
    }

    fn set_auto(&mut self, on: bool) {
        self.state.auto_mode = on;
        self.state.auto_fsm = AutoFsm::Idle;
    }

    fn engage(&mut self) {
        self.state.adhesive_engaged = [true; 2];
    }

    fn disengage(&mut self) {
        if self.state.adhesive_engaged.iter().any(|&e| e) {
            self.state.adhesive_engaged = [false; 2];
            self.release_until_ms = Some(self.now_ms + self.config.release_pulse_ms as u64);
        }
    }

    fn wrist_position_at(&self, t_ms: u64) -> u16 {
        let Some(r) = self.wrist_ramp else {
            return self.state.servo_commands[3];
        };
        let ramp = self.config.wrist_ramp_ms.max(1) as f64;
        let frac = ((t_ms.saturating_sub(r.start_ms)) as f64 / ramp).min(1.0);
        (r.from as f64 + (r.to as f64 - r.from as f64) * frac).round() as u16
    }

    fn start_wrist(&mut self, lock: bool, at_ms: u64) {
        self.state.wrist_timer = None;
        self.begin_ramp(lock, at_ms);
        self.settle_ramp(at_ms);
    }

    fn begin_ramp(&mut self, lock: bool, at_ms: u64) {
        let from = self.wrist_position_at(at_ms);
        let to = if lock { SERVO_FULL } else { 0 };
        if self.wrist_ramp.is_none() && from == to {
            return;
        }
        self.state.servo_commands[3] = from;
        self.wrist_ramp = Some(WristRamp {
            from,
            to,
            start_ms: at_ms,
        });
        self.state.wrist_locked = false;
    }

    fn settle_ramp(&mut self, at_ms: u64) {
        let Some(r) = self.wrist_ramp else {
            return;
        };
        let pos = self.wrist_position_at(at_ms);
        self.state.servo_commands[3] = pos;
        if at_ms >= r.start_ms + self.config.wrist_ramp_ms as u64 {
            self.wrist_ramp = None;
            self.state.servo_commands[3] = r.to;
            self.state.wrist_locked = r.to == SERVO_FULL;
        }
    }

    fn refresh_servos(&mut self) {
        let s = &mut self.state;
        s.servo_commands[0] = if s.adhesive_engaged[0] { SERVO_FULL } else { 0 };
        s.servo_commands[1] = if s.adhesive_engaged[1] { SERVO_FULL } else { 0 };
        s.servo_commands[2] = if self.release_until_ms.is_some() {
            SERVO_FULL
        } else {
            0
        };
    }
}

impl Default for Gripper {
    fn default() -> Self {
        Gripper::new(GripperConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idle_ticks(g: &mut Gripper, until_ms: u64) {
        let mut t = g.now_ms();
        while t < until_ms {
            t += g.config().tick_ms as u64;
            g.tick(TofSample::invalid(t), [0; 4], t);
        }
    }

    #[test]
    fn boot_status_is_clear() {
        assert_eq!(Gripper::default().status(), 0x0000);
    }

    #[test]
    fn close_engages_then_locks_after_delay_and_ramp() {
        let mut g = Gripper::default();
        g.execute(Command::Close, 0);
        assert_eq!(g.status(), 0x0003);
        idle_ticks(&mut g, 250);
        assert!(!g.state().wrist_locked);
        assert!(g.state().servo_commands[3] == 0);
        idle_ticks(&mut g, 500);
        assert!(g.state().servo_commands[3] > 0 && !g.state().wrist_locked);
        idle_ticks(&mut g, 750);
        assert_eq!(g.status(), 0x0007);
    }

    #[test]
    fn disable_auto_keeps_grasp() {
        let mut g = Gripper::default();
        g.execute(Command::Engage, 0);
        g.execute(Command::DisableAuto, 0);
        assert_eq!(g.state().adhesive_engaged, [true, true]);
    }

    #[test]
    fn mark_zero_without_experiment_is_noop() {
        let mut g = Gripper::default();
        g.execute(Command::Mark, 0);
        assert_eq!(g.status(), 0);
        assert_eq!(g.log().logging(), None);
    }

    #[test]
    fn auto_and_mark_bits() {
        let mut g = Gripper::default();
        g.execute(Command::EnableAuto, 0);
        g.execute(Command::Mark, 3);
        assert_eq!(g.status(), 0x0018);
    }

    #[test]
    fn mark_while_logging_switches_experiment() {
        let mut g = Gripper::default();
        g.execute(Command::Mark, 1);
        idle_ticks(&mut g, 100);
        g.execute(Command::Mark, 2);
        idle_ticks(&mut g, 150);
        assert_eq!(g.log().records(1).unwrap().len(), 2);
        assert_eq!(g.log().records(2).unwrap().len(), 1);
        assert_eq!(g.state().current_experiment, 2);
    }

    #[test]
    fn open_disengages_disables_auto_and_unlocks_later() {
        let mut g = Gripper::default();
        g.execute(Command::Close, 0);
        g.execute(Command::EnableAuto, 0);
        idle_ticks(&mut g, 1000);
        assert_eq!(g.status(), 0x000F);
        g.execute(Command::Open, 0);
        assert_eq!(g.status(), status_bits::WRIST_LOCKED);
        assert_eq!(g.state().servo_commands[2], SERVO_FULL);
        idle_ticks(&mut g, 1250);
        assert_eq!(g.status(), 0);
        assert_eq!(g.state().servo_commands[2], 0);
        idle_ticks(&mut g, 1800);
        assert_eq!(g.state().servo_commands[3], 0);
    }

    #[test]
    fn engage_is_idempotent_and_disengage_after_open_is_noop() {
        let mut g = Gripper::default();
        g.execute(Command::Engage, 0);
        let once = g.state().clone();
        g.execute(Command::Engage, 0);
        assert_eq!(g.state(), &once);

        g.execute(Command::Open, 0);
        idle_ticks(&mut g, 1000);
        let opened = g.state().clone();
        g.execute(Command::Disengage, 0);
        assert_eq!(g.state(), &opened);
    }

    #[test]
    fn lock_and_unlock_touch_only_the_wrist() {
        let mut g = Gripper::default();
        g.execute(Command::Lock, 0);
        idle_ticks(&mut g, 500);
        assert_eq!(g.status(), status_bits::WRIST_LOCKED);
        g.execute(Command::Unlock, 0);
        assert_eq!(g.status(), 0);
        assert_eq!(g.state().adhesive_engaged, [false, false]);
    }

    #[test]
    fn set_delay_changes_close_timing() {
        let mut g = Gripper::default();
        g.execute(Command::SetDelay, 100);
        g.execute(Command::Close, 0);
        idle_ticks(&mut g, 600);
        assert!(g.state().wrist_locked);
    }

    #[test]
    fn unknown_code_is_rejected() {
        let mut g = Gripper::default();
        assert_eq!(g.execute_code(0x7F, 0), Err(UnknownCommand(0x7F)));
        assert_eq!(g.execute_code(0x00, 0), Err(UnknownCommand(0x00)));
    }

    #[test]
    fn command_names_roundtrip() {
        for c in Command::ALL {
            assert_eq!(Command::from_name(c.name()), Some(c));
            assert_eq!(Command::from_code(c.code()), Some(c));
        }
        assert_eq!(Command::from_name("enable_auto"), Some(Command::EnableAuto));
        assert_eq!(Command::from_name("next-record"), Some(Command::NextRecord));
        assert_eq!(Command::from_name("FLY"), None);
    }

    #[test]
    fn auto_mode_off_never_engages() {
        let mut g = Gripper::default();
        for k in 0..100u64 {
            let t = k * 50;
            let d = 100 - k as i64;
            g.tick(TofSample::from_reading(d, t), [0; 4], t);
        }
        assert_eq!(g.state().adhesive_engaged, [false, false]);
    }

    #[test]
    fn constant_approach_fires_after_ttc_plus_delay() {
        // 40 mm/s, 2 mm per tick, readings exact.
        let mut g = Gripper::default();
        g.execute(Command::EnableAuto, 0);
        let mut crossing = None;
        let mut fired = None;
        for k in 0..200u64 {
            let t = k * 50;
            let gap = 100.0 - 40.0 * t as f64 / 1000.0;
            if crossing.is_none() && gap < 40.0 {
                crossing = Some(t);
            }
            g.tick(TofSample::from_reading(gap.round() as i64, t), [0; 4], t);
            if fired.is_none() && g.state().adhesive_engaged[0] {
                fired = Some(t);
            }
        }
        // gap 38 mm at the first tick under threshold, so contact 0.95 s later
        let crossing = crossing.unwrap();
        let fired = fired.unwrap();
        let expected = crossing + 950 + 250;
        assert!(
            fired.abs_diff(expected) <= 50,
            "fired {fired}, expected {expected}"
        );
    }

    #[test]
    fn invalid_samples_do_not_cancel_a_schedule() {
        let mut g = Gripper::default();
        g.execute(Command::EnableAuto, 0);
        let mut t = 0;
        for d in (30..=60).rev().step_by(3) {
            g.tick(TofSample::from_reading(d, t), [0; 4], t);
            t += 50;
        }
        assert!(matches!(g.state().auto_fsm, AutoFsm::Scheduled { .. }));
        while !g.state().adhesive_engaged[0] {
            g.tick(TofSample::invalid(t), [0; 4], t);
            t += 50;
            assert!(t < 5000);
        }
    }

    #[test]
    fn logging_one_record_per_tick() {
        let mut g = Gripper::default();
        g.execute(Command::Mark, 9);
        idle_ticks(&mut g, 500);
        g.execute(Command::Mark, 0);
        idle_ticks(&mut g, 1000);
        let recs = g.log().records(9).unwrap();
        assert_eq!(recs.len(), 10);
        for (i, r) in recs.iter().enumerate() {
            let r = ExperimentRecord::decode(r).unwrap();
            assert_eq!(r.seq, i as u32);
            assert_eq!(r.experiment_id, 9);
            assert_eq!(r.status & status_bits::LOGGING, status_bits::LOGGING);
        }
    }
}
