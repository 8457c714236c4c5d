//! In-series passive/active suspension, centre of gravity bookkeeping, support
//! polygon stability margin, and stowed/deployed envelopes.
//!
//! Suspension angles are measured at the parallelogram link; positive means
//! compression (the wheel rises relative to the body). The wheel's vertical
//! position relative to the body is `link_length * sin(output_angle)`.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::math;
use crate::model::{RoverGeometry, FRONT_LEFT, FRONT_RIGHT, REAR_LEFT, REAR_RIGHT, WHEEL_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("support contacts are collinear or fewer than three")]
    DegenerateSupport,
    #[error("requested centre of gravity shift is outside actuator authority: {0}")]
    ShiftUnreachable(String),
}

/// Suspension tuning shared by the four units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuspensionParams {
    /// N·m/rad
    pub spring_rate: f64,
    /// N·m
    pub preload: f64,
    /// Passive travel limits, rad.
    pub travel: [f64; 2],
    /// Active actuator authority, rad.
    pub active_limits: [f64; 2],
    /// m
    pub link_length: f64,
    /// Active actuator slew rate, rad/s.
    pub active_rate: f64,
}

impl Default for SuspensionParams {
    /// Deflects ~10% of travel under a quarter of the default rover weight at
    /// lunar gravity.
    fn default() -> Self {
        Self {
            spring_rate: 191.0,
            preload: 4.0,
            travel: [-0.35, 0.35],
            active_limits: [-0.35, 0.35],
            link_length: 0.3,
            active_rate: 0.5,
        }
    }
}

impl SuspensionParams {
    /// Vertical wheel travel available in compression, m.
    pub fn usable_travel(&self) -> f64 {
        self.link_length * math::sin(self.travel[1])
    }

    /// Linearised vertical stiffness at the contact, N/m.
    pub fn vertical_stiffness(&self) -> f64 {
        self.spring_rate / (self.link_length * self.link_length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspensionUnit {
    pub passive_deflection: f64,
    pub active_offset: f64,
    pub spring_rate: f64,
    pub preload: f64,
    pub travel: [f64; 2],
    pub active_limits: [f64; 2],
    pub link_length: f64,
}

impl SuspensionUnit {
    pub fn from_params(p: &SuspensionParams) -> Self {
        Self {
            passive_deflection: 0.0,
            active_offset: 0.0,
            spring_rate: p.spring_rate,
            preload: p.preload,
            travel: p.travel,
            active_limits: p.active_limits,
            link_length: p.link_length,
        }
    }

    pub fn output_angle(&self) -> f64 {
        self.passive_deflection + self.active_offset
    }

    /// Wheel height relative to its nominal body-frame position, m.
    pub fn wheel_rise(&self) -> f64 {
        self.link_length * math::sin(self.output_angle())
    }

    /// Hub frame rotation; the parallelogram keeps it fixed across travel.
    pub fn hub_rotation(&self) -> Rotation3<f64> {
        Rotation3::identity()
    }
}

impl Default for SuspensionUnit {
    fn default() -> Self {
        Self::from_params(&SuspensionParams::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deflection {
    pub angle: f64,
    pub at_travel_limit: bool,
}

/// Static passive deflection under a normal load, solving
/// `k·θ = max(0, F·L·cosθ − preload)` for θ.
pub fn passive_deflection_from_load(unit: &SuspensionUnit, normal_force: f64) -> Deflection {
    debug_assert!(normal_force >= 0.0);
    let f_l = normal_force.max(0.0) * unit.link_length;
    if f_l <= unit.preload {
        return Deflection { angle: 0.0, at_travel_limit: false };
    }
    let k = unit.spring_rate;
    let residual = |th: f64| k * th - (f_l * math::cos(th) - unit.preload);
    let limit = unit.travel[1];
    if residual(limit) <= 0.0 {
        return Deflection { angle: limit, at_travel_limit: true };
    }
    let (mut lo, mut hi) = (0.0, limit);
    let mut th = ((f_l - unit.preload) / k).min(limit);
    for _ in 0..60 {
        let r = residual(th);
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = th;
        } else {
            hi = th;
        }
        let next = th - r / (k + f_l * math::sin(th));
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if (next - th).abs() < 1e-15 {
            th = next;
            break;
        }
        th = next;
    }
    Deflection { angle: th, at_travel_limit: false }
}

/// Mass-weighted centre of gravity in body frame: bay structure shares, bay
/// payloads, and the four wheels at their suspension-dependent heights.
pub fn compute_cog(geometry: &RoverGeometry, suspension: &[SuspensionUnit; WHEEL_COUNT]) -> Vector3<f64> {
    let mut moment = Vector3::zeros();
    let mut mass = 0.0;
    let mut add = |m: f64, p: Vector3<f64>| {
        moment += p * m;
        mass += m;
    };
    let modules = &geometry.chassis_modules;
    if modules.is_empty() {
        let z = geometry.ground_clearance + 0.5 * geometry.chassis_height;
        add(geometry.structure_mass, Vector3::new(0.0, 0.0, z));
    } else {
        let share = geometry.structure_mass / modules.len() as f64;
        for m in modules {
            let c = geometry.module_center(m);
            add(share, c);
            if m.payload_mass > 0.0 {
                add(m.payload_mass, c + m.payload_cog);
            }
        }
    }
    let r = geometry.wheel_radius();
    for (p, u) in geometry.wheel_positions.iter().zip(suspension.iter()) {
        add(geometry.wheel.mass, Vector3::new(p.x, p.y, r + u.wheel_rise()));
    }
    if mass > 0.0 {
        moment / mass
    } else {
        Vector3::zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub cog: Vector3<f64>,
    /// Convex hull of the contacts, counterclockwise.
    pub support_polygon: Vec<Vector2<f64>>,
    /// Gravity projection of the CoG onto the support plane.
    pub projected_cog: Vector2<f64>,
    /// Signed distance to the nearest edge, positive inside, m.
    pub margin: f64,
    /// Edge `i` runs from `support_polygon[i]` to the next vertex.
    pub tipover_axis: usize,
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counterclockwise convex hull without collinear vertices.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Static stability of a CoG over ground contacts on a slope.
///
/// `contacts` and `cog` are expressed in the support-plane frame (z along
/// the plane normal). `slope_azimuth` is the downhill direction in that frame.
pub fn stability_margin(
    cog: Vector3<f64>,
    contacts: &[Vector2<f64>],
    slope: f64,
    slope_azimuth: f64,
) -> Result<StabilityReport, StabilityError> {
    let hull = convex_hull(contacts);
    if hull.len() < 3 {
        return Err(StabilityError::DegenerateSupport);
    }
    let shift = cog.z * math::tan(slope);
    let projected = Vector2::new(
        cog.x + shift * math::cos(slope_azimuth),
        cog.y + shift * math::sin(slope_azimuth),
    );
    let mut margin = f64::INFINITY;
    let mut axis = 0;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let d = cross(&a, &b, &projected) / (b - a).norm();
        if d < margin {
            margin = d;
            axis = i;
        }
    }
    Ok(StabilityReport { cog, support_polygon: hull, projected_cog: projected, margin, tipover_axis: axis })
}

/// Body rotation for a pitch (about y) then roll (about x) tilt.
pub fn tilt_rotation(pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), pitch)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), roll)
}

/// Body attachment rise produced by the active offsets of each unit, m.
fn attachment_rise(u: &SuspensionUnit) -> f64 {
    u.link_length * (math::sin(u.passive_deflection) - math::sin(u.output_angle()))
}

/// Pitch and roll of the body produced by the active offsets, from a
/// least-squares plane through the attachment rises.
pub fn body_tilt_from_offsets(
    geometry: &RoverGeometry,
    units: &[SuspensionUnit; WHEEL_COUNT],
) -> (f64, f64) {
    let p = &geometry.wheel_positions;
    let dz: [f64; WHEEL_COUNT] = std::array::from_fn(|i| attachment_rise(&units[i]));
    let sxx: f64 = p.iter().map(|q| q.x * q.x).sum();
    let syy: f64 = p.iter().map(|q| q.y * q.y).sum();
    let a: f64 = p.iter().zip(dz.iter()).map(|(q, z)| q.x * z).sum::<f64>() / sxx;
    let b: f64 = p.iter().zip(dz.iter()).map(|(q, z)| q.y * z).sum::<f64>() / syy;
    let pitch = math::asin((-a).clamp(-1.0, 1.0));
    let roll = math::asin((b / math::cos(pitch)).clamp(-1.0, 1.0));
    (pitch, roll)
}

/// Active offsets that tilt the body so a CoG at `cog_height` above the
/// attachment plane moves horizontally by `target_shift`.
pub fn active_cog_shift(
    target_shift: Vector2<f64>,
    cog_height: f64,
    geometry: &RoverGeometry,
    units: &[SuspensionUnit; WHEEL_COUNT],
) -> Result<[f64; WHEEL_COUNT], StabilityError> {
    if target_shift.x == 0.0 && target_shift.y == 0.0 {
        return Ok([0.0; WHEEL_COUNT]);
    }
    if !(cog_height > 0.0) || target_shift.y.abs() >= cog_height {
        return Err(StabilityError::ShiftUnreachable(format!(
            "lateral shift {:.3} m with cog height {:.3} m",
            target_shift.y, cog_height
        )));
    }
    let roll = -math::asin(target_shift.y / cog_height);
    let sp = target_shift.x / (cog_height * math::cos(roll));
    if sp.abs() >= 1.0 {
        return Err(StabilityError::ShiftUnreachable(format!(
            "longitudinal shift {:.3} m",
            target_shift.x
        )));
    }
    let pitch = math::asin(sp);
    let mut out = [0.0; WHEEL_COUNT];
    for (i, (p, u)) in geometry.wheel_positions.iter().zip(units.iter()).enumerate() {
        let rise = -p.x * math::sin(pitch) + p.y * math::sin(roll) * math::cos(pitch);
        let s = math::sin(u.passive_deflection) - rise / u.link_length;
        if s.abs() > 1.0 {
            return Err(StabilityError::ShiftUnreachable(format!("wheel {i} beyond link reach")));
        }
        let offset = math::asin(s) - u.passive_deflection;
        if offset < u.active_limits[0] || offset > u.active_limits[1] {
            return Err(StabilityError::ShiftUnreachable(format!(
                "wheel {i} offset {offset:.3} rad outside [{:.3}, {:.3}]",
                u.active_limits[0], u.active_limits[1]
            )));
        }
        out[i] = offset;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringLoad {
    /// Moment about the steering axis, N·m.
    pub bending_torque: f64,
    /// Force along the steering axis carried by the bearings, N.
    pub axial_load: f64,
}

/// Load on the steering axis from an offset contact patch.
pub fn steering_bending_torque(normal_force: f64, traction_force: f64, lever: f64) -> SteeringLoad {
    SteeringLoad { bending_torque: traction_force * lever, axial_load: normal_force }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Envelope {
    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }
}

/// Fold angles: each wheel swings towards the body's transverse midline.
pub const STOW_ANGLES: [f64; WHEEL_COUNT] = [FRAC_PI_2, -FRAC_PI_2, -FRAC_PI_2, FRAC_PI_2];

/// Wheel center in body frame for a given steer angle, accounting for the
/// on-side steering lever.
pub fn wheel_center(geometry: &RoverGeometry, wheel: usize, steer: f64) -> Vector2<f64> {
    let p = geometry.wheel_positions[wheel];
    let side = p.y.signum();
    let lever = Vector2::new(0.0, side * geometry.steering_offset_lever);
    let axis = p - lever;
    let (s, c) = (math::sin(steer), math::cos(steer));
    axis + Vector2::new(c * lever.x - s * lever.y, s * lever.x + c * lever.y)
}

/// Bounding box with wheels folded and the belly lowered to the ground
/// (`stowed`), or at the nominal driving pose.
pub fn stow_envelope(geometry: &RoverGeometry, stowed: bool) -> Envelope {
    let (d, w) = (geometry.wheel.diameter, geometry.wheel.tile_width);
    let mut half_x: f64 = 0.0;
    let mut half_y: f64 = 0.0;
    for i in [FRONT_LEFT, FRONT_RIGHT, REAR_LEFT, REAR_RIGHT] {
        let steer = if stowed { STOW_ANGLES[i] } else { 0.0 };
        let c = wheel_center(geometry, i, steer);
        let (s, co) = (math::sin(steer).abs(), math::cos(steer).abs());
        half_x = half_x.max(c.x.abs() + co * 0.5 * d + s * 0.5 * w);
        half_y = half_y.max(c.y.abs() + s * 0.5 * d + co * 0.5 * w);
    }
    for m in &geometry.chassis_modules {
        let c = geometry.module_center(m);
        half_x = half_x.max(c.x.abs() + 0.5 * m.length);
        half_y = half_y.max(c.y.abs() + 0.5 * m.width);
    }
    let lowering = if stowed { geometry.ground_clearance } else { 0.0 };
    let height = (geometry.ground_clearance + geometry.chassis_height - lowering).max(d);
    Envelope { length: 2.0 * half_x, width: 2.0 * half_y, height }
}
