// Licensed under the Apache-2.0 license

//! Scenario configuration.
//!
//! Scenarios are TOML documents. Any field can be overridden from the
//! command line with a dotted path (`approach.misalignment_deg=20`). Every
//! error names the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adhesion::{AdhesionCalibration, FLIGHT_SURFACE_QUALITY};
use crate::bus::DEFAULT_GRIPPER_ID;
use crate::firmware::GripperConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
}

impl ConfigError {
    fn field(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Field {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlyerConfig {
    pub mass_kg: f64,
    /// Gripper tip in the body frame; x points toward the perch.
    pub mount_offset_m: [f64; 2],
}

impl Default for FlyerConfig {
    fn default() -> Self {
        FlyerConfig {
            mass_kg: 10.0,
            mount_offset_m: [0.3, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceConfig {
    pub point_m: [f64; 2],
    /// Outward normal, toward the approaching flyer.
    pub normal: [f64; 2],
    pub quality: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            point_m: [0.0, 0.0],
            normal: [-1.0, 0.0],
            quality: FLIGHT_SURFACE_QUALITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproachConfig {
    /// Initial gripper-to-surface gap along the normal.
    pub start_gap_m: f64,
    /// Initial closing speed.
    pub speed_mm_s: f64,
    /// Heading error of the gripper axis relative to the surface normal.
    pub misalignment_deg: f64,
    pub lateral_offset_m: f64,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        ApproachConfig {
            start_gap_m: 0.5,
            speed_mm_s: 30.0,
            misalignment_deg: 0.0,
            lateral_offset_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub kp: f64,
    pub kd: f64,
    /// How far behind the surface plane the gripper waypoint sits.
    pub waypoint_behind_m: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            kp: 0.005,
            kd: 0.05,
            waypoint_behind_m: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_s: f64,
    pub timeout_s: f64,
    /// How long a perch must hold before the run counts as perched.
    pub hold_s: f64,
    pub seed: u64,
    /// Steady outward pull applied while perched (test fixture).
    pub external_pull_n: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_s: 0.05,
            timeout_s: 60.0,
            hold_s: 2.0,
            seed: 1,
            external_pull_n: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub tof_noise_mm: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig { tof_noise_mm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    pub gripper_id: u8,
}

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            gripper_id: DEFAULT_GRIPPER_ID,
        }
    }
}

/// A host command issued at a fixed scenario time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCommand {
    pub at_s: f64,
    pub cmd: String,
    #[serde(default)]
    pub param: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub speed_min_mm_s: f64,
    pub speed_max_mm_s: f64,
    pub misalignment_mean_deg: f64,
    pub misalignment_sigma_deg: f64,
    pub speed_bins: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            trials: 200,
            speed_min_mm_s: 20.0,
            speed_max_mm_s: 50.0,
            misalignment_mean_deg: 0.0,
            misalignment_sigma_deg: 3.0,
            speed_bins: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullTestConfig {
    pub trials: usize,
    pub pull_rate_n_s: f64,
}

impl Default for PullTestConfig {
    fn default() -> Self {
        PullTestConfig {
            trials: 5,
            pull_rate_n_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub flyer: FlyerConfig,
    pub surface: SurfaceConfig,
    pub approach: ApproachConfig,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    pub sensor: SensorConfig,
    pub bus: BusConfig,
    pub gripper: GripperConfig,
    pub adhesion: AdhesionCalibration,
    pub operator: Vec<OperatorCommand>,
    pub monte_carlo: MonteCarloConfig,
    pub pull_test: PullTestConfig,
}

impl Default for ScenarioConfig {
    /// The granite-table nominal perch: auto-grasp on, waypoint behind the
    /// acrylic target.
    fn default() -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: "nominal".into(),
            flyer: FlyerConfig::default(),
            surface: SurfaceConfig::default(),
            approach: ApproachConfig::default(),
            controller: ControllerConfig::default(),
            sim: SimConfig::default(),
            sensor: SensorConfig::default(),
            bus: BusConfig::default(),
            gripper: GripperConfig {
                auto_mode: true,
                ..GripperConfig::default()
            },
            adhesion: AdhesionCalibration::default(),
            operator: Vec::new(),
            monte_carlo: MonteCarloConfig::default(),
            pull_test: PullTestConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(doc))
            .map_err(|e| ConfigError::field(&e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key.path=value` overrides to an already-built config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml(&self.to_toml(), overrides)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn f(path: &str, message: impl Into<String>) -> ConfigError {
            ConfigError::field(path, message)
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(f(
                "schema_version",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }
        if !(self.sim.dt_s > 0.0) {
            return Err(f("sim.dt_s", "must be > 0"));
        }
        if !(self.sim.timeout_s > 0.0) {
            return Err(f("sim.timeout_s", "must be > 0"));
        }
        if self.sim.hold_s < 0.0 {
            return Err(f("sim.hold_s", "must be >= 0"));
        }
        if !(self.flyer.mass_kg > 0.0) {
            return Err(f("flyer.mass_kg", "must be > 0"));
        }
        let [nx, ny] = self.surface.normal;
        if !((nx * nx + ny * ny).sqrt() - 1.0).abs().lt(&1e-9) {
            return Err(f("surface.normal", "must be a unit vector"));
        }
        if !(self.surface.quality > 0.0 && self.surface.quality <= 1.0) {
            return Err(f("surface.quality", "must be in (0, 1]"));
        }
        if !(self.controller.kp > 0.0) {
            return Err(f("controller.kp", "must be > 0"));
        }
        if !(self.controller.kd > 0.0) {
            return Err(f("controller.kd", "must be > 0"));
        }
        if !(self.controller.waypoint_behind_m > 0.0) {
            return Err(f(
                "controller.waypoint_behind_m",
                "waypoint must lie strictly behind the surface",
            ));
        }
        if !(self.approach.start_gap_m > 0.0) {
            return Err(f("approach.start_gap_m", "must be > 0"));
        }
        if self.sensor.tof_noise_mm < 0.0 {
            return Err(f("sensor.tof_noise_mm", "must be >= 0"));
        }
        if self.gripper.tick_ms == 0 {
            return Err(f("gripper.tick_ms", "must be > 0"));
        }
        if (self.sim.dt_s * 1000.0 - self.gripper.tick_ms as f64).abs() > 1e-6 {
            return Err(f("gripper.tick_ms", "must equal sim.dt_s in milliseconds"));
        }
        if self.bus.gripper_id >= crate::protocol::BROADCAST_ID
            || crate::bus::JOINT_SERVO_IDS.contains(&self.bus.gripper_id)
        {
            return Err(f("bus.gripper_id", "id taken or reserved"));
        }
        for (i, op) in self.operator.iter().enumerate() {
            if let Err(e) = crate::pac::HostCommand::parse(&op.cmd, op.param) {
                return Err(f(&format!("operator[{i}]"), e.to_string()));
            }
            if op.at_s < 0.0 {
                return Err(f(&format!("operator[{i}].at_s"), "must be >= 0"));
            }
        }
        let mc = &self.monte_carlo;
        if mc.speed_min_mm_s > mc.speed_max_mm_s {
            return Err(f("monte_carlo.speed_min_mm_s", "exceeds speed_max_mm_s"));
        }
        if mc.misalignment_sigma_deg < 0.0 {
            return Err(f("monte_carlo.misalignment_sigma_deg", "must be >= 0"));
        }
        if mc.speed_bins == 0 {
            return Err(f("monte_carlo.speed_bins", "must be >= 1"));
        }
        if !(self.adhesion.pull_noise >= 0.0 && self.adhesion.pull_noise < 1.0) {
            return Err(f("adhesion.pull_noise", "must be in [0, 1)"));
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::field(path, format!("{k} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
