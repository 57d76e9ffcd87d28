// Licensed under the Apache-2.0 license

//! Shared test helpers: a from-scratch model of the gripper command table and
//! a random command-script generator.

#![allow(dead_code)]

use rand::Rng;

pub const TICK_MS: u64 = 50;
const WRIST_MOTION_MS: u64 = 500;

/// Status bits as documented for the STATUS register.
const PAIR_A: u16 = 1;
const PAIR_B: u16 = 2;
const WRIST: u16 = 4;
const AUTO: u16 = 8;
const LOGGING: u16 = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    lock: bool,
    done_ms: u64,
}

/// Event-driven reference: keeps only what the STATUS word can observe.
#[derive(Debug, Clone)]
pub struct RefGripper {
    now: u64,
    engaged: bool,
    auto: bool,
    delay: u64,
    experiment: u16,
    /// Position the wrist rests at when no motion is in progress.
    rest_locked: bool,
    motion: Option<Motion>,
    timer: Option<(bool, u64)>,
}

impl Default for RefGripper {
    fn default() -> Self {
        RefGripper {
            now: 0,
            engaged: false,
            auto: false,
            delay: 250,
            experiment: 0,
            rest_locked: false,
            motion: None,
            timer: None,
        }
    }
}

impl RefGripper {
    fn finish_motion(&mut self, t: u64) {
        if let Some(m) = self.motion {
            if m.done_ms <= t {
                self.rest_locked = m.lock;
                self.motion = None;
            }
        }
    }

    /// A motion always takes the full ramp time from wherever the wrist is,
    /// unless it is already at rest at the requested end.
    fn move_wrist(&mut self, lock: bool, t: u64) {
        self.finish_motion(t);
        if self.motion.is_none() && self.rest_locked == lock {
            return;
        }
        self.motion = Some(Motion {
            lock,
            done_ms: t + WRIST_MOTION_MS,
        });
    }

    pub fn advance(&mut self, now: u64) {
        if let Some((lock, at)) = self.timer {
            if at <= now {
                self.timer = None;
                self.move_wrist(lock, at);
            }
        }
        self.finish_motion(now);
        self.now = now;
    }

    /// Applies one command by its table code.
    pub fn apply(&mut self, code: u8, param: u16) {
        match code {
            // OPEN: let go, leave auto, unlock after the delay.
            0x01 => {
                self.engaged = false;
                self.auto = false;
                self.timer = Some((false, self.now + self.delay));
            }
            // CLOSE: grab now, lock after the delay.
            0x02 => {
                self.engaged = true;
                self.timer = Some((true, self.now + self.delay));
            }
            0x03 => self.auto = !self.auto,
            0x04 => self.experiment = param,
            0x05 => self.engaged = true,
            0x06 => self.engaged = false,
            0x07 | 0x08 => {
                self.timer = None;
                self.move_wrist(code == 0x07, self.now);
            }
            0x09 => self.auto = true,
            0x0A => self.auto = false,
            0x0B => self.delay = param as u64,
            0x0C..=0x10 => {}
            _ => panic!("not a command: {code}"),
        }
    }

    pub fn status(&self) -> u16 {
        let mut s = 0;
        if self.engaged {
            s |= PAIR_A | PAIR_B;
        }
        if self.motion.is_none() && self.rest_locked {
            s |= WRIST;
        }
        if self.auto {
            s |= AUTO;
        }
        if self.experiment != 0 {
            s |= LOGGING;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Command { code: u8, param: u16 },
    Wait { ticks: u64 },
}

pub fn takes_param(code: u8) -> bool {
    matches!(code, 0x04 | 0x0B | 0x0E | 0x10)
}

pub fn random_step<R: Rng>(rng: &mut R) -> Step {
    if rng.gen_bool(0.35) {
        return Step::Wait {
            ticks: rng.gen_range(1..=15),
        };
    }
    let code = rng.gen_range(1..=16u8);
    let param = match code {
        0x04 | 0x0E => rng.gen_range(0..4),
        0x0B => rng.gen_range(0..=600),
        0x10 => rng.gen_range(0..3),
        _ => 0,
    };
    Step::Command { code, param }
}

pub fn random_script<R: Rng>(rng: &mut R, max_len: usize) -> Vec<Step> {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| random_step(rng)).collect()
}
