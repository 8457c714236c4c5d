//! Shared domain types: wheel and chassis parameters, rover geometry, commanded
//! motion, and the breadboard scaling law.
//!
//! Frames: body x forward, y left, z up, yaw counterclockwise positive. The
//! body origin sits on the ground plane below the geometric center of the
//! wheel rectangle when the suspension is at its nominal pose.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::math;

pub const FRONT_LEFT: usize = 0;
pub const FRONT_RIGHT: usize = 1;
pub const REAR_LEFT: usize = 2;
pub const REAR_RIGHT: usize = 3;
pub const WHEEL_COUNT: usize = 4;

/// Default ratio for the breadboard scaling law; its cube root is ~0.55.
pub const DEFAULT_SCALE_RATIO: f64 = 1.0 / 6.0;

pub const LUNAR_GRAVITY: f64 = 1.62;
pub const EARTH_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessRange {
    pub min: f64,
    pub max: f64,
}

impl StiffnessRange {
    pub fn mean(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// Flexible wheel with in-hub motor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelParams {
    /// Outer diameter, m.
    pub diameter: f64,
    /// Tread width, m.
    pub tile_width: f64,
    /// Radial stiffness of the flexible tread, N/m.
    pub radial_stiffness: StiffnessRange,
    /// Rim speed limit, m/s.
    pub max_rim_speed: f64,
    /// Drive torque limit, N·m.
    pub max_torque: f64,
    /// Wheel plus hub motor, kg.
    pub mass: f64,
}

impl Default for WheelParams {
    fn default() -> Self {
        Self {
            diameter: 0.612,
            tile_width: 0.216,
            radial_stiffness: StiffnessRange { min: 2500.0, max: 6000.0 },
            max_rim_speed: 3.0 / 3.6,
            max_torque: 80.0,
            mass: 7.0,
        }
    }
}

impl WheelParams {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            (self.diameter > 0.0, "diameter must be positive"),
            (self.tile_width > 0.0, "tile_width must be positive"),
            (
                self.radial_stiffness.min > 0.0
                    && self.radial_stiffness.min <= self.radial_stiffness.max,
                "radial_stiffness must satisfy 0 < min <= max",
            ),
            (self.max_rim_speed > 0.0, "max_rim_speed must be positive"),
            (self.max_torque > 0.0, "max_torque must be positive"),
            (self.mass >= 0.0, "mass must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(ModelError::InvalidGeometry(msg.to_string()));
            }
        }
        Ok(())
    }
}

/// Wheel angular speed limit implied by the rim speed limit, rad/s.
pub fn max_wheel_angular_speed(wheel: &WheelParams) -> f64 {
    wheel.max_rim_speed / wheel.radius()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Central,
    LateralLeft,
    LateralRight,
    Top,
}

/// A payload bay. `payload_cog` is expressed relative to the bay's box center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChassisModule {
    pub name: ModuleKind,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub payload_mass: f64,
    #[serde(default = "zero3")]
    pub payload_cog: Vector3<f64>,
}

fn zero3() -> Vector3<f64> {
    Vector3::zeros()
}

impl ChassisModule {
    pub fn new(name: ModuleKind, length: f64, width: f64, height: f64) -> Self {
        Self { name, length, width, height, payload_mass: 0.0, payload_cog: Vector3::zeros() }
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(ModelError::InvalidGeometry(format!("{:?}: non-positive box", self.name)));
        }
        if !(self.payload_mass >= 0.0) {
            return Err(ModelError::InvalidGeometry(format!(
                "{:?}: negative payload mass",
                self.name
            )));
        }
        let half = Vector3::new(self.length, self.width, self.height) * 0.5;
        let inside = (0..3).all(|i| self.payload_cog[i].abs() <= half[i]);
        if !inside {
            return Err(ModelError::InvalidGeometry(format!(
                "{:?}: payload cog outside module box",
                self.name
            )));
        }
        Ok(())
    }
}

/// Default bays: central 1.8×0.231×0.65, lateral 1.4×0.634×0.4, top 1.8×1.5×0.4.
pub fn default_chassis_modules() -> Vec<ChassisModule> {
    vec![
        ChassisModule::new(ModuleKind::Central, 1.8, 0.231, 0.65),
        ChassisModule::new(ModuleKind::LateralLeft, 1.4, 0.634, 0.4),
        ChassisModule::new(ModuleKind::LateralRight, 1.4, 0.634, 0.4),
        ChassisModule::new(ModuleKind::Top, 1.8, 1.5, 0.4),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoverGeometry {
    /// Contact centers in body frame, indexed FL, FR, RL, RR.
    pub wheel_positions: [Vector2<f64>; WHEEL_COUNT],
    /// Distance from the steering axis to the wheel mid-plane, m.
    pub steering_offset_lever: f64,
    pub steering_actuator_diameter: f64,
    /// Belly height above ground at the nominal pose, m.
    pub ground_clearance: f64,
    /// Height of the structural frame above the belly, m.
    pub chassis_height: f64,
    /// Structure mass spread evenly over the bay centroids, kg.
    pub structure_mass: f64,
    pub chassis_modules: Vec<ChassisModule>,
    pub wheel: WheelParams,
}

impl Default for RoverGeometry {
    fn default() -> Self {
        Self::rectangular(1.775, 1.284)
    }
}

impl RoverGeometry {
    /// Default rover with wheels on a `wheelbase` × `track` rectangle.
    pub fn rectangular(wheelbase: f64, track: f64) -> Self {
        let (hx, hy) = (0.5 * wheelbase, 0.5 * track);
        Self {
            wheel_positions: [
                Vector2::new(hx, hy),
                Vector2::new(hx, -hy),
                Vector2::new(-hx, hy),
                Vector2::new(-hx, -hy),
            ],
            steering_offset_lever: 0.200,
            steering_actuator_diameter: 0.150,
            ground_clearance: 0.3,
            chassis_height: 0.7,
            structure_mass: 60.0,
            chassis_modules: default_chassis_modules(),
            wheel: WheelParams::default(),
        }
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheel_positions[FRONT_LEFT].x - self.wheel_positions[REAR_LEFT].x
    }

    pub fn track(&self) -> f64 {
        self.wheel_positions[FRONT_LEFT].y - self.wheel_positions[FRONT_RIGHT].y
    }

    pub fn wheel_radius(&self) -> f64 {
        self.wheel.radius()
    }

    pub fn module(&self, kind: ModuleKind) -> Option<&ChassisModule> {
        self.chassis_modules.iter().find(|m| m.name == kind)
    }

    pub fn module_mut(&mut self, kind: ModuleKind) -> Option<&mut ChassisModule> {
        self.chassis_modules.iter_mut().find(|m| m.name == kind)
    }

    /// Box center of a bay in body frame at the nominal suspension pose.
    ///
    /// Central and lateral bays sit on the belly; laterals flank the central
    /// bay; the top bay is flush with the top of the frame.
    pub fn module_center(&self, module: &ChassisModule) -> Vector3<f64> {
        let belly = self.ground_clearance;
        match module.name {
            ModuleKind::Central => Vector3::new(0.0, 0.0, belly + 0.5 * module.height),
            ModuleKind::LateralLeft | ModuleKind::LateralRight => {
                let central_w = self.module(ModuleKind::Central).map_or(0.0, |c| c.width);
                let y = 0.5 * central_w + 0.5 * module.width;
                let y = if module.name == ModuleKind::LateralLeft { y } else { -y };
                Vector3::new(0.0, y, belly + 0.5 * module.height)
            }
            ModuleKind::Top => {
                Vector3::new(0.0, 0.0, belly + self.chassis_height - 0.5 * module.height)
            }
        }
    }

    pub fn total_payload_mass(&self) -> f64 {
        self.chassis_modules.iter().map(|m| m.payload_mass).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.structure_mass + WHEEL_COUNT as f64 * self.wheel.mass + self.total_payload_mass()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.wheel.validate()?;
        let p = &self.wheel_positions;
        let tol = 1e-9;
        let rect = (p[FRONT_LEFT].x - p[FRONT_RIGHT].x).abs() < tol
            && (p[REAR_LEFT].x - p[REAR_RIGHT].x).abs() < tol
            && (p[FRONT_LEFT].y - p[REAR_LEFT].y).abs() < tol
            && (p[FRONT_RIGHT].y - p[REAR_RIGHT].y).abs() < tol
            && (p[FRONT_LEFT].x + p[REAR_LEFT].x).abs() < tol
            && (p[FRONT_LEFT].y + p[FRONT_RIGHT].y).abs() < tol
            && p[FRONT_LEFT].x > 0.0
            && p[FRONT_LEFT].y > 0.0;
        if !rect {
            return Err(ModelError::InvalidGeometry(
                "wheel positions must form a rectangle symmetric about both body axes \
                 (order FL, FR, RL, RR)"
                    .into(),
            ));
        }
        let min_lever = 0.5 * self.wheel.tile_width + 0.5 * self.steering_actuator_diameter;
        if self.steering_offset_lever < min_lever {
            return Err(ModelError::InvalidGeometry(format!(
                "steering_offset_lever {} below clearance minimum {}",
                self.steering_offset_lever, min_lever
            )));
        }
        if !(self.ground_clearance >= 0.0 && self.chassis_height > 0.0) {
            return Err(ModelError::InvalidGeometry("clearance/height out of range".into()));
        }
        if !(self.structure_mass >= 0.0) {
            return Err(ModelError::InvalidGeometry("negative structure mass".into()));
        }
        for m in &self.chassis_modules {
            m.validate()?;
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self, ModelError> {
        let g: Self = serde_json::from_str(s).map_err(|e| ModelError::Config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

/// Commanded planar body motion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyTwist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BodyTwist {
    pub const ZERO: BodyTwist = BodyTwist { vx: 0.0, vy: 0.0, omega: 0.0 };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.omega == 0.0
    }

    /// Planar velocity of a body-fixed point.
    pub fn point_velocity(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.vx - self.omega * p.y, self.vy + self.omega * p.x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocomotionMode {
    SkidSteering,
    AckermannTurn,
    CrabTurn,
    PointTurn,
}

impl LocomotionMode {
    pub const ALL: [LocomotionMode; 4] = [
        LocomotionMode::SkidSteering,
        LocomotionMode::AckermannTurn,
        LocomotionMode::CrabTurn,
        LocomotionMode::PointTurn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LocomotionMode::SkidSteering => "skid_steering",
            LocomotionMode::AckermannTurn => "ackermann_turn",
            LocomotionMode::CrabTurn => "crab_turn",
            LocomotionMode::PointTurn => "point_turn",
        }
    }
}

impl std::fmt::Display for LocomotionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// World-frame planar pose; heading stays in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading: math::normalize_angle(heading) }
    }

    /// Applies a body-frame displacement and heading change.
    pub fn compose(&self, dx: f64, dy: f64, dheading: f64) -> Pose2D {
        let (s, c) = (math::sin(self.heading), math::cos(self.heading));
        Pose2D::new(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.heading + dheading)
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        math::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Scales a full-size length to the earth breadboard: `length * ratio^(1/3)`.
pub fn breadboard_scale(length_full: f64, ratio: f64) -> Result<f64, ModelError> {
    if !(length_full > 0.0) || !length_full.is_finite() {
        return Err(ModelError::Domain(format!("length must be positive, got {length_full}")));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(ModelError::Domain(format!("ratio must be in (0, 1], got {ratio}")));
    }
    Ok(length_full * math::cbrt(ratio))
}

/// Full-size length for a breadboard length; inverse of [`breadboard_scale`].
pub fn full_size_from_breadboard(length_scaled: f64, ratio: f64) -> Result<f64, ModelError> {
    let k = breadboard_scale(1.0, ratio)?;
    if !(length_scaled > 0.0) || !length_scaled.is_finite() {
        return Err(ModelError::Domain(format!("length must be positive, got {length_scaled}")));
    }
    Ok(length_scaled / k)
}
