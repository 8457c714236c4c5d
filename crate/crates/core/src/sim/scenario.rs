use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::manager::{Command, ManagerConfig};
use crate::model::{LocomotionMode, ModuleKind, Pose2D, RoverGeometry, LUNAR_GRAVITY};
use crate::suspension::SuspensionParams;
use crate::terrain::Terrain;

pub const SCENARIO_SCHEMA: &str = "emrs-scenario/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadSpec {
    pub module: ModuleKind,
    pub mass: f64,
    /// Offset from the bay center, m.
    #[serde(default)]
    pub cog: [f64; 3],
}

/// Resistance on the body opposite to its heading: `force + ramp_rate·(t − start_time)`
/// once `t ≥ start_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragSpec {
    #[serde(default)]
    pub force: f64,
    #[serde(default)]
    pub ramp_rate: f64,
    #[serde(default)]
    pub start_time: f64,
}

impl DragSpec {
    pub fn at(&self, t: f64) -> f64 {
        if t < self.start_time {
            0.0
        } else {
            self.force + self.ramp_rate * (t - self.start_time)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSpec {
    #[serde(default = "yes")]
    pub deployed: bool,
    #[serde(default = "crab")]
    pub mode: LocomotionMode,
    #[serde(default)]
    pub pose: Pose2D,
}

fn yes() -> bool {
    true
}

fn crab() -> LocomotionMode {
    LocomotionMode::CrabTurn
}

impl Default for StartSpec {
    fn default() -> Self {
        Self { deployed: true, mode: LocomotionMode::CrabTurn, pose: Pose2D::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub t: f64,
    pub command: Command,
}

fn lunar() -> f64 {
    LUNAR_GRAVITY
}
fn one() -> f64 {
    1.0
}
fn dt_default() -> f64 {
    0.01
}
fn substeps_default() -> u32 {
    10
}
fn log_every_default() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub terrain: Terrain,
    #[serde(default = "lunar")]
    pub gravity: f64,
    /// Rolling/slipping friction coefficient.
    pub mu: f64,
    /// Static friction of a braked, planted wheel; defaults to `mu`.
    #[serde(default)]
    pub planted_mu: Option<f64>,
    /// Rolling resistance coefficient.
    #[serde(default)]
    pub rolling_resistance: f64,
    /// Skid-steering yaw slip factor.
    #[serde(default = "one")]
    pub slip_factor: f64,
    #[serde(default)]
    pub payload: Vec<PayloadSpec>,
    #[serde(default)]
    pub drag: Option<DragSpec>,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Drive encoder noise standard deviation, rad/s.
    #[serde(default)]
    pub encoder_noise: f64,
    /// Held active centre-of-gravity shift in body frame, m.
    #[serde(default)]
    pub cog_shift: Option<[f64; 2]>,
    #[serde(default = "dt_default")]
    pub dt: f64,
    /// Controller substeps per tick.
    #[serde(default = "substeps_default")]
    pub substeps: u32,
    /// Telemetry record every this many ticks.
    #[serde(default = "log_every_default")]
    pub log_every: u32,
    #[serde(default)]
    pub start: StartSpec,
    #[serde(default)]
    pub rover: Option<RoverGeometry>,
    #[serde(default)]
    pub suspension: SuspensionParams,
    #[serde(default)]
    pub manager: ManagerConfig,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

impl Scenario {
    /// Minimal valid scenario on flat ground.
    pub fn flat(duration: f64, mu: f64) -> Self {
        Self {
            schema: SCENARIO_SCHEMA.into(),
            name: String::new(),
            terrain: Terrain::Flat,
            gravity: LUNAR_GRAVITY,
            mu,
            planted_mu: None,
            rolling_resistance: 0.0,
            slip_factor: 1.0,
            payload: Vec::new(),
            drag: None,
            duration,
            seed: 0,
            encoder_noise: 0.0,
            cog_shift: None,
            dt: 0.01,
            substeps: 10,
            log_every: 10,
            start: StartSpec::default(),
            rover: None,
            suspension: SuspensionParams::default(),
            manager: ManagerConfig::default(),
            script: Vec::new(),
        }
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(text)?;
        s.terrain.resolve(base_dir).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        let mut s = Self::from_json_str(&text, path.parent().unwrap_or(Path::new(".")))?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.schema != SCENARIO_SCHEMA {
            return bad(format!("schema must be \"{SCENARIO_SCHEMA}\", got \"{}\"", self.schema));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if let Some(p) = self.planted_mu {
            if !(p >= 0.0) || !p.is_finite() {
                return bad(format!("planted_mu must be >= 0, got {p}"));
            }
        }
        if !(self.gravity > 0.0) {
            return bad(format!("gravity must be > 0, got {}", self.gravity));
        }
        if !(self.rolling_resistance >= 0.0) {
            return bad("rolling_resistance must be >= 0".into());
        }
        if !(self.slip_factor > 0.0 && self.slip_factor <= 1.0) {
            return bad(format!("slip_factor must be in (0, 1], got {}", self.slip_factor));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) || self.substeps == 0 || self.log_every == 0 {
            return bad("dt must be in (0, 0.1], substeps and log_every >= 1".into());
        }
        if !(self.encoder_noise >= 0.0) {
            return bad("encoder_noise must be >= 0".into());
        }
        for w in self.script.windows(2) {
            if w[1].t < w[0].t {
                return bad(format!("script times must be non-decreasing ({} after {})", w[1].t, w[0].t));
            }
        }
        if let Some(e) = self.script.iter().find(|e| !(e.t >= 0.0) || !e.t.is_finite()) {
            return bad(format!("script time must be >= 0, got {}", e.t));
        }
        for p in &self.payload {
            if !(p.mass >= 0.0) {
                return bad(format!("payload mass must be >= 0, got {}", p.mass));
            }
        }
        self.terrain.validate().map_err(ScenarioError::Invalid)?;
        self.manager.gait.validate().map_err(ScenarioError::Invalid)?;
        self.geometry()?;
        Ok(())
    }

    /// Rover geometry with the scenario payloads applied.
    pub fn geometry(&self) -> Result<RoverGeometry, ScenarioError> {
        let mut g = self.rover.clone().unwrap_or_default();
        for p in &self.payload {
            let m = g
                .module_mut(p.module)
                .ok_or_else(|| ScenarioError::Invalid(format!("rover has no {:?} bay", p.module)))?;
            m.payload_mass = p.mass;
            m.payload_cog = Vector3::from(p.cog);
        }
        g.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(g)
    }

    pub fn planted_mu(&self) -> f64 {
        self.planted_mu.unwrap_or(self.mu)
    }

    pub fn total_ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }
}
