//! Body twist to per-wheel steer/drive setpoints, and the reverse fit used for
//! odometry.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Index, IndexMut};
use thiserror::Error;

use crate::math;
use crate::model::{max_wheel_angular_speed, BodyTwist, LocomotionMode, RoverGeometry, WHEEL_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("inadmissible twist for {mode}: {component} must be zero")]
    InadmissibleTwist { mode: LocomotionMode, component: &'static str },
    #[error("twist has non-finite components")]
    NonFinite,
    #[error("wheel {wheel} speed {speed:.4} rad/s exceeds limit {limit:.4} rad/s")]
    SpeedLimitExceeded { wheel: usize, speed: f64, limit: f64 },
    #[error("degenerate least-squares fit")]
    DegenerateFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSetpoint {
    /// rad, within [-pi/2, pi/2]
    pub steer_angle: f64,
    /// rad/s, negative drives backwards
    pub drive_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelSetpoints(pub [WheelSetpoint; WHEEL_COUNT]);

impl WheelSetpoints {
    pub fn iter(&self) -> impl Iterator<Item = &WheelSetpoint> {
        self.0.iter()
    }

    pub fn steer_angles(&self) -> [f64; WHEEL_COUNT] {
        self.0.map(|w| w.steer_angle)
    }

    pub fn drive_speeds(&self) -> [f64; WHEEL_COUNT] {
        self.0.map(|w| w.drive_speed)
    }

    /// Ground velocity of each contact for a wheel of the given radius.
    pub fn ground_velocities(&self, radius: f64) -> [Vector2<f64>; WHEEL_COUNT] {
        self.0.map(|w| {
            let v = w.drive_speed * radius;
            Vector2::new(v * math::cos(w.steer_angle), v * math::sin(w.steer_angle))
        })
    }
}

impl Index<usize> for WheelSetpoints {
    type Output = WheelSetpoint;
    fn index(&self, i: usize) -> &WheelSetpoint {
        &self.0[i]
    }
}

impl IndexMut<usize> for WheelSetpoints {
    fn index_mut(&mut self, i: usize) -> &mut WheelSetpoint {
        &mut self.0[i]
    }
}

/// Instantaneous center of rotation in body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Icr {
    At(Vector2<f64>),
    AtInfinity,
}

impl Icr {
    pub fn of(twist: &BodyTwist) -> Icr {
        if twist.omega == 0.0 {
            Icr::AtInfinity
        } else {
            Icr::At(Vector2::new(-twist.vy / twist.omega, twist.vx / twist.omega))
        }
    }
}

/// Rejects twists a mode cannot realize; never projects.
pub fn validate_twist(twist: BodyTwist, mode: LocomotionMode) -> Result<BodyTwist, KinematicsError> {
    if !twist.is_finite() {
        return Err(KinematicsError::NonFinite);
    }
    let offending = match mode {
        LocomotionMode::SkidSteering | LocomotionMode::AckermannTurn => {
            (twist.vy != 0.0).then_some("vy")
        }
        LocomotionMode::CrabTurn => (twist.omega != 0.0).then_some("omega"),
        LocomotionMode::PointTurn => {
            if twist.vx != 0.0 {
                Some("vx")
            } else if twist.vy != 0.0 {
                Some("vy")
            } else {
                None
            }
        }
    };
    match offending {
        Some(component) => Err(KinematicsError::InadmissibleTwist { mode, component }),
        None => Ok(twist),
    }
}

/// Folds a wheel heading into the ±90° steering range, reversing the drive
/// when needed. The contact velocity vector is unchanged.
pub fn wrap_steering(direction: f64, speed: f64) -> (f64, f64) {
    let d = math::normalize_angle(direction);
    if d.abs() <= FRAC_PI_2 {
        (d, speed)
    } else if d > 0.0 {
        (d - PI, -speed)
    } else {
        (d + PI, -speed)
    }
}

pub fn inverse_kinematics(
    twist: BodyTwist,
    mode: LocomotionMode,
    geom: &RoverGeometry,
) -> Result<WheelSetpoints, KinematicsError> {
    let twist = validate_twist(twist, mode)?;
    let r = geom.wheel_radius();
    let mut out = WheelSetpoints::default();
    for (i, p) in geom.wheel_positions.iter().enumerate() {
        out[i] = match mode {
            LocomotionMode::SkidSteering => WheelSetpoint {
                steer_angle: 0.0,
                drive_speed: (twist.vx - twist.omega * p.y) / r,
            },
            _ => {
                let v = twist.point_velocity(p);
                let speed = math::hypot(v.x, v.y);
                if speed == 0.0 {
                    WheelSetpoint::default()
                } else {
                    let (steer_angle, drive_speed) = wrap_steering(math::atan2(v.y, v.x), speed / r);
                    WheelSetpoint { steer_angle, drive_speed }
                }
            }
        };
    }
    check_speed_limits(&out, geom)?;
    Ok(out)
}

pub fn check_speed_limits(sp: &WheelSetpoints, geom: &RoverGeometry) -> Result<(), KinematicsError> {
    let limit = max_wheel_angular_speed(&geom.wheel);
    for (wheel, w) in sp.iter().enumerate() {
        if w.drive_speed.abs() > limit {
            return Err(KinematicsError::SpeedLimitExceeded { wheel, speed: w.drive_speed, limit });
        }
    }
    Ok(())
}

/// Steer angles each mode starts from after a reorientation.
pub fn mode_entry_angles(mode: LocomotionMode, geom: &RoverGeometry) -> [f64; WHEEL_COUNT] {
    match mode {
        LocomotionMode::PointTurn => {
            let probe = BodyTwist::new(0.0, 0.0, 1.0);
            geom.wheel_positions.map(|p| {
                let v = probe.point_velocity(&p);
                wrap_steering(math::atan2(v.y, v.x), 1.0).0
            })
        }
        _ => [0.0; WHEEL_COUNT],
    }
}

/// Least-squares body twist from measured wheel states.
///
/// Skid steering fits only the longitudinal components (`v_i = vx - omega*y_i`)
/// and scales the yaw rate by `slip_factor`; the other modes fit the full
/// rigid-body model to all eight velocity components.
pub fn fit_twist(
    measured: &WheelSetpoints,
    mode: LocomotionMode,
    geom: &RoverGeometry,
    slip_factor: f64,
) -> Result<BodyTwist, KinematicsError> {
    let vel = measured.ground_velocities(geom.wheel_radius());
    if vel.iter().all(|v| v.x == 0.0 && v.y == 0.0) {
        return Ok(BodyTwist::ZERO);
    }
    let pos = &geom.wheel_positions;
    if mode == LocomotionMode::SkidSteering {
        let n = WHEEL_COUNT as f64;
        let mean_y = pos.iter().map(|p| p.y).sum::<f64>() / n;
        let mean_v = vel.iter().map(|v| v.x).sum::<f64>() / n;
        let syy: f64 = pos.iter().map(|p| (p.y - mean_y) * (p.y - mean_y)).sum();
        if syy <= f64::EPSILON {
            return Err(KinematicsError::DegenerateFit);
        }
        let syv: f64 =
            pos.iter().zip(vel.iter()).map(|(p, v)| (p.y - mean_y) * (v.x - mean_v)).sum();
        let omega = -syv / syy;
        let vx = mean_v + omega * mean_y;
        return Ok(BodyTwist::new(vx, 0.0, omega * slip_factor));
    }
    // Rows: [1, 0, -y_i] for x components, [0, 1, x_i] for y components.
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (p, v) in pos.iter().zip(vel.iter()) {
        let rx = Vector3::new(1.0, 0.0, -p.y);
        let ry = Vector3::new(0.0, 1.0, p.x);
        ata += rx * rx.transpose() + ry * ry.transpose();
        atb += rx * v.x + ry * v.y;
    }
    let sol = ata.lu().solve(&atb).ok_or(KinematicsError::DegenerateFit)?;
    if !sol.iter().all(|c| c.is_finite()) {
        return Err(KinematicsError::DegenerateFit);
    }
    Ok(BodyTwist::new(sol.x, sol.y, sol.z))
}

/// Body-frame pose increment over one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    pub dx: f64,
    pub dy: f64,
    pub dheading: f64,
}

/// Odometry increment: fitted twist integrated to first order over `dt`.
pub fn forward_odometry(
    measured: &WheelSetpoints,
    mode: LocomotionMode,
    geom: &RoverGeometry,
    dt: f64,
    slip_factor: f64,
) -> Result<PoseDelta, KinematicsError> {
    assert!(dt > 0.0, "dt must be positive");
    let t = fit_twist(measured, mode, geom, slip_factor)?;
    Ok(PoseDelta { dx: t.vx * dt, dy: t.vy * dt, dheading: t.omega * dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FRONT_LEFT;

    fn deg(x: f64) -> f64 {
        x.to_degrees()
    }

    #[test]
    fn validate_examples() {
        let m = LocomotionMode::AckermannTurn;
        assert!(validate_twist(BodyTwist::new(0.3, 0.0, 0.1), m).is_ok());
        assert_eq!(
            validate_twist(BodyTwist::new(0.3, 0.1, 0.0), m),
            Err(KinematicsError::InadmissibleTwist { mode: m, component: "vy" })
        );
        assert!(validate_twist(BodyTwist::new(0.0, 0.0, 0.4), LocomotionMode::PointTurn).is_ok());
        assert!(validate_twist(BodyTwist::new(0.1, 0.0, 0.4), LocomotionMode::PointTurn).is_err());
        assert!(validate_twist(BodyTwist::new(0.1, 0.2, 0.4), LocomotionMode::CrabTurn).is_err());
        assert_eq!(
            validate_twist(BodyTwist::new(f64::NAN, 0.0, 0.0), LocomotionMode::CrabTurn),
            Err(KinematicsError::NonFinite)
        );
    }

    #[test]
    fn wrap_examples() {
        let (a, s) = wrap_steering(30f64.to_radians(), 1.0);
        assert!((deg(a) - 30.0).abs() < 1e-12 && s == 1.0);
        let (a, s) = wrap_steering(125.91f64.to_radians(), 0.716);
        assert!((deg(a) + 54.09).abs() < 1e-9 && s == -0.716);
        let (a, s) = wrap_steering(-PI, 2.0);
        assert!(a.abs() < 1e-15 && s == -2.0);
    }

    #[test]
    fn crab_straight() {
        let g = RoverGeometry::default();
        let sp = inverse_kinematics(BodyTwist::new(0.5, 0.0, 0.0), LocomotionMode::CrabTurn, &g)
            .unwrap();
        for w in sp.iter() {
            assert_eq!(w.steer_angle, 0.0);
            // 0.5 / 0.306 = 1.6339869281045751 (hand oracle)
            assert!((w.drive_speed - 1.633_986_928_104_575).abs() < 1e-12);
        }
    }

    #[test]
    fn null_twist_zero_everything() {
        let g = RoverGeometry::default();
        for m in LocomotionMode::ALL {
            let sp = inverse_kinematics(BodyTwist::ZERO, m, &g).unwrap();
            assert!(sp.iter().all(|w| w.steer_angle == 0.0 && w.drive_speed == 0.0));
        }
    }

    #[test]
    fn point_turn_front_left() {
        // Tangent direction atan2(0.8875, -0.642) = 125.8812°, wrapped to
        // -54.1188° with reversed drive; radius 1.0953631 m (mpmath).
        let g = RoverGeometry::default();
        let sp = inverse_kinematics(BodyTwist::new(0.0, 0.0, 0.2), LocomotionMode::PointTurn, &g)
            .unwrap();
        let fl = sp[FRONT_LEFT];
        assert!((deg(fl.steer_angle) + 54.118_764_474_422_92).abs() < 1e-9);
        assert!(fl.drive_speed < 0.0);
        assert!((fl.drive_speed.abs() - 0.715_923_573_635_918_5).abs() < 1e-12);
    }

    #[test]
    fn over_limit_rejected_whole() {
        let g = RoverGeometry::default();
        let err = inverse_kinematics(BodyTwist::new(0.9, 0.0, 0.0), LocomotionMode::CrabTurn, &g)
            .unwrap_err();
        assert!(matches!(err, KinematicsError::SpeedLimitExceeded { .. }));
    }

    #[test]
    fn skid_is_differential() {
        let g = RoverGeometry::default();
        let t = BodyTwist::new(0.3, 0.0, 0.2);
        let sp = inverse_kinematics(t, LocomotionMode::SkidSteering, &g).unwrap();
        let r = g.wheel_radius();
        assert!((sp[0].drive_speed * r - (0.3 - 0.2 * 0.642)).abs() < 1e-12);
        assert!((sp[1].drive_speed * r - (0.3 + 0.2 * 0.642)).abs() < 1e-12);
        assert!(sp.iter().all(|w| w.steer_angle == 0.0));
    }

    #[test]
    fn icr_location() {
        assert_eq!(Icr::of(&BodyTwist::new(0.4, 0.0, 0.0)), Icr::AtInfinity);
        match Icr::of(&BodyTwist::new(0.4, 0.0, 0.16)) {
            Icr::At(p) => assert!(p.x.abs() < 1e-15 && (p.y - 2.5).abs() < 1e-12),
            Icr::AtInfinity => panic!(),
        }
    }

    #[test]
    fn stationary_wheels_give_zero_delta() {
        let g = RoverGeometry::default();
        let d = forward_odometry(&WheelSetpoints::default(), LocomotionMode::CrabTurn, &g, 1.0, 1.0)
            .unwrap();
        assert_eq!(d, PoseDelta::default());
    }

    #[test]
    fn skid_slip_factor_scales_yaw() {
        let g = RoverGeometry::default();
        let t = BodyTwist::new(0.2, 0.0, 0.3);
        let sp = inverse_kinematics(t, LocomotionMode::SkidSteering, &g).unwrap();
        let fit = fit_twist(&sp, LocomotionMode::SkidSteering, &g, 0.5).unwrap();
        assert!((fit.vx - 0.2).abs() < 1e-12);
        assert!((fit.omega - 0.15).abs() < 1e-12);
    }

    #[test]
    fn point_turn_entry_angles_match_kinematics() {
        let g = RoverGeometry::default();
        let entry = mode_entry_angles(LocomotionMode::PointTurn, &g);
        let sp = inverse_kinematics(BodyTwist::new(0.0, 0.0, 0.2), LocomotionMode::PointTurn, &g)
            .unwrap();
        for i in 0..WHEEL_COUNT {
            assert!((entry[i] - sp[i].steer_angle).abs() < 1e-15);
        }
        assert_eq!(mode_entry_angles(LocomotionMode::AckermannTurn, &g), [0.0; 4]);
    }
}
