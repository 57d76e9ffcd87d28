// Licensed under the Apache-2.0 license

use std::fmt::Write as _;

use serde::Serialize;

use crate::adhesion::{ContactConditions, EngageFailure};
use crate::config::{ConfigError, ScenarioConfig};
use crate::firmware::AutoTrigger;
use crate::pac::HostCommand;

use super::{Contact, World};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Command {
        time_s: f64,
        command: String,
        param: Option<u16>,
        ok: bool,
    },
    Contact {
        time_s: f64,
        speed_mm_s: f64,
    },
    EngageAttempt {
        time_s: f64,
        pair: usize,
        conditions: ContactConditions,
        failure: Option<EngageFailure>,
    },
    Perched {
        time_s: f64,
    },
    Release {
        time_s: f64,
        pair: usize,
        impulse_n_s: f64,
        forcible: bool,
    },
    Detached {
        time_s: f64,
        pairs: Vec<usize>,
        load_n: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Perched,
    EngageFailed(EngageFailure),
    DetachedAfterPerch,
    Timeout,
}

/// One telemetry line, sampled after each tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub tick: u64,
    pub time_s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub tof_mm: u16,
    pub tof_valid: bool,
    pub status: u16,
    pub load_a_n: f64,
    pub load_b_n: f64,
    pub accel_x: f64,
    pub accel_y: f64,
    pub phase: &'static str,
}

pub const CSV_HEADER: &str = "tick,time_s,x,y,heading,vx,vy,omega,tof_mm,tof_valid,status_hex,load_a_n,load_b_n,accel_x,accel_y,phase";

impl TelemetryRow {
    pub fn capture(world: &World) -> Self {
        let f = &world.flyer;
        let tof = world.bridge().gripper().firmware().last_tof();
        let loads = world.pair_loads();
        let accel = world.last_accel();
        TelemetryRow {
            tick: world.tick,
            time_s: world.time_s,
            x: f.position[0],
            y: f.position[1],
            heading: f.heading,
            vx: f.velocity[0],
            vy: f.velocity[1],
            omega: f.angular_rate,
            tof_mm: tof.distance_mm,
            tof_valid: tof.valid,
            status: world.status(),
            load_a_n: loads[0],
            load_b_n: loads[1],
            accel_x: accel[0],
            accel_y: accel[1],
            phase: match world.contact {
                Contact::Free => "free",
                Contact::Touching { .. } => "touching",
                Contact::Perched => "perched",
            },
        }
    }

    /// Floats use shortest round-trip formatting so the CSV is lossless.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},0x{:04X},{},{},{},{},{}",
            self.tick,
            self.time_s,
            self.x,
            self.y,
            self.heading,
            self.vx,
            self.vy,
            self.omega,
            self.tof_mm,
            self.tof_valid as u8,
            self.status,
            self.load_a_n,
            self.load_b_n,
            self.accel_x,
            self.accel_y,
            self.phase
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub perched: bool,
    pub outcome: Outcome,
    pub ticks: u64,
    pub duration_s: f64,
    /// Normal speed at first contact, mm/s.
    pub contact_speed_mm_s: Option<f64>,
    pub contact_time_s: Option<f64>,
    pub trigger: Option<AutoTrigger>,
    /// Firing time minus (contact time + grasp delay), seconds.
    pub trigger_error_s: Option<f64>,
    pub final_status: u16,
    pub events: Vec<SimEvent>,
    #[serde(skip)]
    pub telemetry: Vec<TelemetryRow>,
}

impl ScenarioResult {
    pub fn telemetry_csv(&self) -> String {
        let mut out = String::with_capacity(self.telemetry.len() * 128);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.telemetry {
            let _ = writeln!(out, "{}", row.csv_line());
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Runs a scenario until it holds a perch for `sim.hold_s`, fails to
/// engage, detaches after perching, or times out.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, ConfigError> {
    run_world(cfg).map(|(result, _)| result)
}

/// Same as [`run_scenario`], also handing back the final world so the
/// gripper log can be retrieved afterwards.
pub fn run_world(cfg: &ScenarioConfig) -> Result<(ScenarioResult, World), ConfigError> {
    cfg.validate()?;
    let mut world = World::new(cfg);
    let mut ops: Vec<_> = cfg
        .operator
        .iter()
        .map(|op| {
            let cmd = HostCommand::parse(&op.cmd, op.param).expect("validated");
            (op.at_s, cmd)
        })
        .collect();
    ops.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ops = ops.into_iter().peekable();

    let max_ticks = (cfg.sim.timeout_s / cfg.sim.dt_s).ceil() as u64;
    let mut telemetry = Vec::with_capacity(max_ticks as usize + 1);
    telemetry.push(TelemetryRow::capture(&world));
    let mut perched_at: Option<f64> = None;
    let mut outcome = Outcome::Timeout;

    while world.tick < max_ticks {
        while let Some((_, cmd)) = ops.next_if(|(at, _)| *at <= world.time_s + 1e-9) {
            world.enqueue(cmd);
        }
        let seen = world.events().len();
        world.step();
        telemetry.push(TelemetryRow::capture(&world));

        let fresh = &world.events()[seen..];
        if perched_at.is_none() {
            perched_at = fresh.iter().find_map(|e| match e {
                SimEvent::Perched { time_s } => Some(*time_s),
                _ => None,
            });
        }
        let failure = fresh.iter().find_map(|e| match e {
            SimEvent::EngageAttempt {
                failure: Some(f), ..
            } => Some(*f),
            _ => None,
        });
        if let Some(f) = failure {
            outcome = Outcome::EngageFailed(f);
            break;
        }
        match (perched_at, world.is_perched()) {
            (Some(_), false) => {
                outcome = Outcome::DetachedAfterPerch;
                break;
            }
            (Some(t), true) if world.time_s - t >= cfg.sim.hold_s - 1e-9 => {
                outcome = Outcome::Perched;
                break;
            }
            _ => {}
        }
    }

    let contact = world.events().iter().find_map(|e| match e {
        SimEvent::Contact { time_s, speed_mm_s } => Some((*time_s, *speed_mm_s)),
        _ => None,
    });
    let fw = world.bridge().gripper().firmware();
    let trigger = fw.last_trigger();
    let delay_s = fw.state().grasp_delay_ms as f64 / 1000.0;
    let trigger_error_s = match (trigger.and_then(|t| t.fired_at_ms), contact) {
        (Some(fired), Some((tc, _))) => Some(fired as f64 / 1000.0 - (tc + delay_s)),
        _ => None,
    };

    let result = ScenarioResult {
        name: cfg.name.clone(),
        seed: cfg.sim.seed,
        perched: outcome == Outcome::Perched,
        outcome,
        ticks: world.tick,
        duration_s: world.time_s,
        contact_speed_mm_s: contact.map(|c| c.1),
        contact_time_s: contact.map(|c| c.0),
        trigger,
        trigger_error_s,
        final_status: world.status(),
        events: world.events().to_vec(),
        telemetry,
    };
    Ok((result, world))
}
