// Licensed under the Apache-2.0 license

//! Planar free-flyer perching simulator (granite-table analog).
//!
//! One [`World`] owns the flyer, the perch surface, the two tile pairs and
//! the bus with the gripper on it. Everything advances in fixed ticks; host
//! commands queue up and are applied at the start of the next tick.

mod campaign;
mod scenario;

pub use campaign::{monte_carlo, wilson_interval, CampaignBin, CampaignReport, TrialSummary};
pub use scenario::{
    run_scenario, run_world, Outcome, ScenarioResult, SimEvent, TelemetryRow, CSV_HEADER,
};

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::adhesion::{
    apply_normal_load, AdhesionCalibration, ContactConditions, EngageFailure, LoadOutcome,
    TilePairState,
};
use crate::config::ScenarioConfig;
use crate::firmware::{TofSample, SERVO_FULL};
use crate::pac::{Ack, HostCommand, PacBridge, PacError};

/// Thruster authority along any axis.
pub const MAX_ACCEL_M_S2: f64 = 0.1;

pub type Vec2 = [f64; 2];

fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: Vec2, k: f64) -> Vec2 {
    [a[0] * k, a[1] * k]
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlyerState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    pub angular_rate: f64,
    pub mass_kg: f64,
    pub mount_offset: Vec2,
}

impl FlyerState {
    pub fn gripper_point(&self) -> Vec2 {
        add(self.position, rotate(self.mount_offset, self.heading))
    }

    /// Unit vector the gripper palm faces.
    pub fn gripper_axis(&self) -> Vec2 {
        rotate([1.0, 0.0], self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerchSurface {
    pub point: Vec2,
    pub normal: Vec2,
    pub quality: f64,
}

impl PerchSurface {
    /// Signed distance of `p` in front of the surface.
    pub fn gap(&self, p: Vec2) -> f64 {
        dot(sub(p, self.point), self.normal)
    }

    /// Angle between the gripper axis and the inward normal, degrees.
    pub fn misalignment_deg(&self, axis: Vec2) -> f64 {
        let inward = scale(self.normal, -1.0);
        let cross = inward[0] * axis[1] - inward[1] * axis[0];
        cross.atan2(dot(inward, axis)).to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

/// `a = kp * (waypoint - position) - kd * velocity`, clamped per axis to the
/// thruster limit.
pub fn pd_control(position: Vec2, velocity: Vec2, waypoint: Vec2, gains: Gains) -> Vec2 {
    let raw = sub(
        scale(sub(waypoint, position), gains.kp),
        scale(velocity, gains.kd),
    );
    raw.map(|a| a.clamp(-MAX_ACCEL_M_S2, MAX_ACCEL_M_S2))
}

/// Contact phase of the gripper against the perch surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Contact {
    Free,
    /// Pressed against the surface, not adhered.
    Touching {
        impact_speed_mm_s: f64,
    },
    Perched,
}

pub struct World {
    pub flyer: FlyerState,
    pub surface: PerchSurface,
    pub pairs: [TilePairState; 2],
    pub contact: Contact,
    pub time_s: f64,
    pub tick: u64,
    dt_s: f64,
    gains: Gains,
    waypoint: Vec2,
    calibration: AdhesionCalibration,
    tof_noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    bridge: PacBridge,
    commanded_engage: [bool; 2],
    queue: VecDeque<HostCommand>,
    external_pull_n: f64,
    last_accel: Vec2,
    last_wrist_cmd: u16,
    pair_loads: [f64; 2],
    first_contact_s: Option<f64>,
    events: Vec<SimEvent>,
}

impl World {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let surface = PerchSurface {
            point: cfg.surface.point_m,
            normal: cfg.surface.normal,
            quality: cfg.surface.quality,
        };
        let inward = scale(surface.normal, -1.0);
        let tangent = [-surface.normal[1], surface.normal[0]];
        let heading = inward[1].atan2(inward[0]) + cfg.approach.misalignment_deg.to_radians();
        let mut flyer = FlyerState {
            position: [0.0, 0.0],
            heading,
            velocity: scale(inward, cfg.approach.speed_mm_s / 1000.0),
            angular_rate: 0.0,
            mass_kg: cfg.flyer.mass_kg,
            mount_offset: cfg.flyer.mount_offset_m,
        };
        let lateral = scale(tangent, cfg.approach.lateral_offset_m);
        let tip = add(
            add(
                surface.point,
                scale(surface.normal, cfg.approach.start_gap_m),
            ),
            lateral,
        );
        flyer.position = sub(tip, rotate(flyer.mount_offset, heading));
        let waypoint = add(
            add(
                surface.point,
                scale(surface.normal, -cfg.controller.waypoint_behind_m),
            ),
            lateral,
        );
        let tof_noise = (cfg.sensor.tof_noise_mm > 0.0)
            .then(|| Normal::new(0.0, cfg.sensor.tof_noise_mm).expect("sigma checked"));
        World {
            flyer,
            surface,
            pairs: [TilePairState::new(surface.quality); 2],
            contact: Contact::Free,
            time_s: 0.0,
            tick: 0,
            dt_s: cfg.sim.dt_s,
            gains: Gains {
                kp: cfg.controller.kp,
                kd: cfg.controller.kd,
            },
            waypoint,
            calibration: cfg.adhesion.clone(),
            tof_noise,
            rng: ChaCha8Rng::seed_from_u64(cfg.sim.seed),
            bridge: PacBridge::with_gripper(cfg.bus.gripper_id, cfg.gripper.clone()),
            commanded_engage: [false; 2],
            queue: VecDeque::new(),
            external_pull_n: cfg.sim.external_pull_n,
            last_accel: [0.0; 2],
            last_wrist_cmd: 0,
            pair_loads: [0.0; 2],
            first_contact_s: None,
            events: Vec::new(),
        }
    }

    pub fn bridge(&self) -> &PacBridge {
        &self.bridge
    }

    pub fn bridge_mut(&mut self) -> &mut PacBridge {
        &mut self.bridge
    }

    pub fn waypoint(&self) -> Vec2 {
        self.waypoint
    }

    pub fn gap_m(&self) -> f64 {
        self.surface.gap(self.flyer.gripper_point())
    }

    pub fn misalignment_deg(&self) -> f64 {
        self.surface.misalignment_deg(self.flyer.gripper_axis())
    }

    pub fn status(&self) -> u16 {
        self.bridge.gripper().firmware().status()
    }

    pub fn first_contact_s(&self) -> Option<f64> {
        self.first_contact_s
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn last_accel(&self) -> Vec2 {
        self.last_accel
    }

    pub fn pair_loads(&self) -> [f64; 2] {
        self.pair_loads
    }

    pub fn is_perched(&self) -> bool {
        self.contact == Contact::Perched
    }

    /// Queues a command for the next tick boundary.
    pub fn enqueue(&mut self, cmd: HostCommand) {
        self.queue.push_back(cmd);
    }

    /// Range the ToF sensor reports right now: gap measured along the
    /// gripper axis, Gaussian noise, 1 mm quantization, 5-100 mm window.
    pub fn tof_sample(&mut self) -> TofSample {
        let now_ms = self.tick * self.tick_ms();
        let along = dot(self.flyer.gripper_axis(), scale(self.surface.normal, -1.0));
        if along < 0.1 {
            return TofSample::invalid(now_ms);
        }
        let mut range_mm = self.gap_m() * 1000.0 / along;
        if let Some(noise) = &self.tof_noise {
            range_mm += noise.sample(&mut self.rng);
        }
        TofSample::from_reading(range_mm.round() as i64, now_ms)
    }

    fn tick_ms(&self) -> u64 {
        (self.dt_s * 1000.0).round() as u64
    }

    /// Current draw implied by the servo commands.
    fn servo_currents(&self) -> [u16; 4] {
        const IDLE: u16 = 120;
        let cmds = self.bridge.gripper().firmware().state().servo_commands;
        let load = |c: u16| if c == SERVO_FULL { 450 } else { IDLE };
        let wrist = if cmds[3] != self.last_wrist_cmd {
            380
        } else if cmds[3] == SERVO_FULL {
            250
        } else {
            IDLE
        };
        [
            load(cmds[0]),
            load(cmds[1]),
            if cmds[2] == SERVO_FULL { 330 } else { IDLE },
            wrist,
        ]
    }

    fn contact_conditions(&self) -> ContactConditions {
        let closing = -dot(self.flyer.velocity, self.surface.normal) * 1000.0;
        let speed = match self.contact {
            Contact::Touching { impact_speed_mm_s } => impact_speed_mm_s,
            _ => closing.max(0.0),
        };
        ContactConditions {
            gap_mm: self.gap_m().max(0.0) * 1000.0,
            approach_speed_mm_s: speed,
            angular_misalignment_deg: self.misalignment_deg(),
        }
    }

    /// One control period.
    pub fn step(&mut self) -> Vec<Result<Ack, PacError>> {
        let acks: Vec<_> = std::iter::from_fn(|| self.queue.pop_front())
            .map(|cmd| {
                let r = self.bridge.dispatch(&cmd);
                self.events.push(SimEvent::Command {
                    time_s: self.time_s,
                    command: cmd.command.name().to_string(),
                    param: cmd.param,
                    ok: r.is_ok(),
                });
                r
            })
            .collect();

        let tof = self.tof_sample();
        let currents = self.servo_currents();
        self.last_wrist_cmd = self.bridge.gripper().firmware().state().servo_commands[3];
        let now_ms = self.tick * self.tick_ms();
        self.bridge
            .gripper_mut()
            .firmware_mut()
            .tick(tof, currents, now_ms);

        self.sync_adhesion();

        let mut accel = pd_control(
            self.flyer.gripper_point(),
            self.flyer.velocity,
            self.waypoint,
            self.gains,
        );
        if self.contact == Contact::Perched && self.external_pull_n > 0.0 {
            accel = add(
                accel,
                scale(
                    self.surface.normal,
                    self.external_pull_n / self.flyer.mass_kg,
                ),
            );
        }
        self.last_accel = accel;
        self.integrate(accel);
        self.tick += 1;
        self.time_s = self.tick as f64 * self.dt_s;
        acks
    }

    fn sync_adhesion(&mut self) {
        let commanded = self.bridge.gripper().firmware().state().adhesive_engaged;
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            if commanded[i] == self.commanded_engage[i] {
                continue;
            }
            self.commanded_engage[i] = commanded[i];
            if commanded[i] {
                let cond = self.contact_conditions();
                let result = self.pairs[i].attempt_engage(&cond, &self.calibration);
                self.events.push(SimEvent::EngageAttempt {
                    time_s: self.time_s,
                    pair: i,
                    conditions: cond,
                    failure: result.err(),
                });
            } else {
                let load = self.pair_loads[i];
                let r = self.pairs[i].release(load, &self.calibration);
                if r.impulse_n_s > 0.0 {
                    let dv = r.impulse_n_s / self.flyer.mass_kg;
                    self.flyer.velocity = add(self.flyer.velocity, scale(self.surface.normal, dv));
                    self.events.push(SimEvent::Release {
                        time_s: self.time_s,
                        pair: i,
                        impulse_n_s: r.impulse_n_s,
                        forcible: r.forcible,
                    });
                }
            }
        }
        let adhered = self.pairs.iter().any(|p| p.engaged);
        match (self.contact, adhered) {
            (Contact::Perched, false) => self.contact = Contact::Free,
            (Contact::Touching { .. }, true) => {
                self.contact = Contact::Perched;
                self.events.push(SimEvent::Perched {
                    time_s: self.time_s,
                });
            }
            _ => {}
        }
        if self.contact == Contact::Perched {
            self.flyer.velocity = [0.0; 2];
            self.flyer.angular_rate = 0.0;
        }
    }

    /// Semi-implicit Euler with an inelastic unilateral contact at the
    /// surface and a pin constraint while perched. `step` calls this with the
    /// controller output; it is public for open-loop use.
    pub fn integrate(&mut self, accel: Vec2) {
        let dt = self.dt_s;
        let n = self.surface.normal;
        self.pair_loads = [0.0; 2];
        if self.contact == Contact::Perched {
            let pull = self.flyer.mass_kg * dot(accel, n).max(0.0);
            match apply_normal_load(&mut self.pairs, pull, &self.calibration) {
                LoadOutcome::Holds { per_pair_n } => {
                    for (i, p) in self.pairs.iter().enumerate() {
                        if p.engaged {
                            self.pair_loads[i] = per_pair_n;
                        }
                    }
                    return;
                }
                LoadOutcome::Detached { pairs } => {
                    self.events.push(SimEvent::Detached {
                        time_s: self.time_s,
                        pairs,
                        load_n: pull,
                    });
                    if self.pairs.iter().any(|p| p.engaged) {
                        return;
                    }
                    self.contact = Contact::Free;
                }
            }
        }

        let gap_before = self.gap_m();
        self.flyer.velocity = add(self.flyer.velocity, scale(accel, dt));
        if matches!(self.contact, Contact::Touching { .. }) {
            let vn = dot(self.flyer.velocity, n);
            if vn < 0.0 {
                self.flyer.velocity = sub(self.flyer.velocity, scale(n, vn));
            }
            self.flyer.angular_rate = 0.0;
        }
        self.flyer.position = add(self.flyer.position, scale(self.flyer.velocity, dt));
        self.flyer.heading += self.flyer.angular_rate * dt;

        let gap = self.gap_m();
        match self.contact {
            Contact::Free if gap <= 0.0 => {
                let vn = dot(self.flyer.velocity, n);
                let impact_speed_mm_s = -vn * 1000.0;
                self.flyer.position = sub(self.flyer.position, scale(n, gap));
                self.flyer.velocity = sub(self.flyer.velocity, scale(n, vn));
                self.flyer.angular_rate = 0.0;
                let frac = if gap_before > gap {
                    gap_before / (gap_before - gap)
                } else {
                    0.0
                };
                let t = self.time_s + frac * dt;
                self.first_contact_s.get_or_insert(t);
                self.contact = Contact::Touching { impact_speed_mm_s };
                self.events.push(SimEvent::Contact {
                    time_s: t,
                    speed_mm_s: impact_speed_mm_s,
                });
            }
            Contact::Touching { .. } if gap > 0.0 => self.contact = Contact::Free,
            Contact::Touching { .. } => {
                self.flyer.position = sub(self.flyer.position, scale(n, gap));
            }
            _ => {}
        }
    }

    pub fn engage_failure(&self) -> Option<EngageFailure> {
        self.events.iter().rev().find_map(|e| match e {
            SimEvent::EngageAttempt {
                failure: Some(f), ..
            } => Some(*f),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_world() -> World {
        World::new(&ScenarioConfig::default())
    }

    #[test]
    fn pd_examples() {
        let g = Gains { kp: 1.0, kd: 2.0 };
        assert_eq!(
            pd_control([1.0, 2.0], [0.0, 0.0], [1.0, 2.0], g),
            [0.0, 0.0]
        );
        assert_eq!(pd_control([0.0, 0.0], [0.0, 0.0], [1.0, 0.0], g)[0], 0.1);
        let a = pd_control([0.0, 0.0], [0.0, 0.0], [0.05, 0.0], g);
        assert!((a[0] - 0.05).abs() < 1e-15);
        let a = pd_control([0.0, 0.0], [0.0, 0.0], [-3.0, 7.0], g);
        assert_eq!(a, [-0.1, 0.1]);
    }

    #[test]
    fn constant_accel_for_one_second() {
        let mut w = free_world();
        w.flyer.velocity = [0.0; 2];
        for _ in 0..20 {
            w.integrate([0.1, 0.0]);
        }
        assert!((w.flyer.velocity[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_command_keeps_velocity() {
        let mut w = free_world();
        w.flyer.velocity = [0.0123, -0.004];
        let v0 = w.flyer.velocity;
        for _ in 0..1000 {
            w.integrate([0.0, 0.0]);
            if w.contact != Contact::Free {
                break;
            }
            assert_eq!(w.flyer.velocity, v0);
        }
    }

    #[test]
    fn tof_range_limits() {
        let mut cfg = ScenarioConfig::default();
        cfg.sensor.tof_noise_mm = 0.0;
        cfg.approach.start_gap_m = 0.150;
        assert!(!World::new(&cfg).tof_sample().valid);
        cfg.approach.start_gap_m = 0.050;
        let s = World::new(&cfg).tof_sample();
        assert!(s.valid);
        assert_eq!(s.distance_mm, 50);
    }

    #[test]
    fn tof_noise_is_seeded() {
        let mut cfg = ScenarioConfig::default();
        cfg.approach.start_gap_m = 0.06;
        let seq = |seed| {
            let mut c = cfg.clone();
            c.sim.seed = seed;
            let mut w = World::new(&c);
            (0..50)
                .map(|_| w.tof_sample().distance_mm)
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(5), seq(5));
        assert_ne!(seq(5), seq(6));
    }

    #[test]
    fn misalignment_reads_back() {
        let mut cfg = ScenarioConfig::default();
        cfg.approach.misalignment_deg = -7.5;
        let w = World::new(&cfg);
        assert!((w.misalignment_deg() + 7.5).abs() < 1e-9);
        assert!((w.gap_m() - 0.5).abs() < 1e-12);
    }
}
