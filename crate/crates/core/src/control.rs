//! Drive velocity loops, steering position loops with trapezoidal trajectory
//! generation, and the actuator fault monitors.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::model::WHEEL_COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("steering goal {0:.4} rad outside ±pi/2")]
    GoalOutOfRange(f64),
    #[error("invalid limits: rate {rate}, accel {accel}")]
    InvalidLimits { rate: f64, accel: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorState {
    /// rad/s
    pub angular_velocity: f64,
    /// rad
    pub angle: f64,
    /// N·m, last commanded (after clamping)
    pub applied_torque: f64,
    /// controller accumulator
    pub integrator: f64,
}

impl MotorState {
    pub fn at_angle(angle: f64) -> Self {
        Self { angle, ..Self::default() }
    }
}

/// Drive loop gains and the lumped hub-motor plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WheelControlConfig {
    pub kp: f64,
    pub ki: f64,
    /// kg·m²
    pub inertia: f64,
    /// N·m·s/rad
    pub viscous: f64,
    pub torque_limit: f64,
}

impl Default for WheelControlConfig {
    fn default() -> Self {
        Self { kp: 40.0, ki: 80.0, inertia: 0.35, viscous: 0.5, torque_limit: 80.0 }
    }
}

impl WheelControlConfig {
    /// Largest integrator magnitude the anti-windup allows.
    pub fn integrator_bound(&self) -> f64 {
        self.torque_limit / self.ki
    }
}

/// One velocity-loop tick against the unloaded motor model.
pub fn step_wheel_controller(
    state: &MotorState,
    setpoint: f64,
    dt: f64,
    cfg: &WheelControlConfig,
) -> (f64, MotorState) {
    step_wheel_controller_loaded(state, setpoint, 0.0, dt, cfg)
}

/// PI torque with conditional-integration anti-windup, then one implicit step
/// of `J·dω/dt = τ - b·ω - load`.
pub fn step_wheel_controller_loaded(
    state: &MotorState,
    setpoint: f64,
    load_torque: f64,
    dt: f64,
    cfg: &WheelControlConfig,
) -> (f64, MotorState) {
    debug_assert!(dt > 0.0 && dt <= 0.1);
    let torque = wheel_torque_command(state, setpoint, dt, cfg);
    let (tau, integrator) = torque;
    let mut next = *state;
    next.integrator = integrator;
    next.applied_torque = tau;
    next.angular_velocity =
        (state.angular_velocity + dt * (tau - load_torque) / cfg.inertia) / (1.0 + dt * cfg.viscous / cfg.inertia);
    next.angle = state.angle + next.angular_velocity * dt;
    (tau, next)
}

/// PI law only; returns (clamped torque, new integrator).
pub fn wheel_torque_command(
    state: &MotorState,
    setpoint: f64,
    dt: f64,
    cfg: &WheelControlConfig,
) -> (f64, f64) {
    let err = setpoint - state.angular_velocity;
    let bound = cfg.integrator_bound();
    let mut integ = (state.integrator + err * dt).clamp(-bound, bound);
    let raw = cfg.kp * err + cfg.ki * integ;
    if raw.abs() > cfg.torque_limit && raw.signum() == err.signum() {
        integ = state.integrator;
    }
    let tau = (cfg.kp * err + cfg.ki * integ).clamp(-cfg.torque_limit, cfg.torque_limit);
    (tau, integ)
}

/// Trapezoidal (or triangular) slew between two steering angles.
///
/// The profile is stored analytically; `knots()` gives the phase boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringTrajectory {
    pub start: f64,
    pub goal: f64,
    pub rate_limit: f64,
    pub accel_limit: f64,
    /// Duration of the acceleration (and deceleration) phase, s.
    pub t_accel: f64,
    /// Duration of the constant-rate phase, s.
    pub t_cruise: f64,
    /// Signed peak rate, rad/s.
    pub peak_rate: f64,
}

impl SteeringTrajectory {
    /// Stationary hold at `angle`.
    pub fn hold(angle: f64) -> Self {
        Self {
            start: angle,
            goal: angle,
            rate_limit: 0.0,
            accel_limit: 0.0,
            t_accel: 0.0,
            t_cruise: 0.0,
            peak_rate: 0.0,
        }
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.t_accel + self.t_cruise
    }

    pub fn is_empty(&self) -> bool {
        self.duration() == 0.0
    }

    /// Reference (angle, rate) at time `t` after the start.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        if self.is_empty() || t >= self.duration() {
            return (self.goal, 0.0);
        }
        if t <= 0.0 {
            return (self.start, 0.0);
        }
        let dir = self.peak_rate.signum();
        let a = self.accel_limit * dir;
        let ta = self.t_accel;
        if t < ta {
            return (self.start + 0.5 * a * t * t, a * t);
        }
        let d_acc = 0.5 * a * ta * ta;
        if t < ta + self.t_cruise {
            let tc = t - ta;
            return (self.start + d_acc + self.peak_rate * tc, self.peak_rate);
        }
        let td = (self.duration() - t).max(0.0);
        (self.goal - 0.5 * a * td * td, a * td)
    }

    /// Phase boundary knots (time, angle).
    pub fn knots(&self) -> Vec<(f64, f64)> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut times = vec![0.0, self.t_accel];
        if self.t_cruise > 0.0 {
            times.push(self.t_accel + self.t_cruise);
        }
        times.push(self.duration());
        times.into_iter().map(|t| (t, self.sample(t).0)).collect()
    }
}

/// Time-optimal rest-to-rest profile under rate and acceleration limits.
pub fn plan_steering_trajectory(
    current: f64,
    goal: f64,
    rate_limit: f64,
    accel_limit: f64,
) -> Result<SteeringTrajectory, ControlError> {
    if !(goal.abs() <= FRAC_PI_2 + 1e-12) || !goal.is_finite() {
        return Err(ControlError::GoalOutOfRange(goal));
    }
    if !(rate_limit > 0.0 && accel_limit > 0.0) {
        return Err(ControlError::InvalidLimits { rate: rate_limit, accel: accel_limit });
    }
    let distance = (goal - current).abs();
    if distance == 0.0 {
        return Ok(SteeringTrajectory::hold(goal));
    }
    let dir = (goal - current).signum();
    let (t_accel, t_cruise, peak) = if distance <= rate_limit * rate_limit / accel_limit {
        let ta = (distance / accel_limit).sqrt();
        (ta, 0.0, accel_limit * ta)
    } else {
        let ta = rate_limit / accel_limit;
        (ta, distance / rate_limit - ta, rate_limit)
    };
    Ok(SteeringTrajectory {
        start: current,
        goal,
        rate_limit,
        accel_limit,
        t_accel,
        t_cruise,
        peak_rate: dir * peak,
    })
}

/// Steering position loop and actuator plant (output side of the gearbox).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringControlConfig {
    pub kp: f64,
    pub kd: f64,
    pub gear_ratio: f64,
    /// Motor-side torque limit, N·m.
    pub motor_torque_limit: f64,
    /// Output-side inertia including the wheel about the steering axis, kg·m².
    pub inertia: f64,
    /// Output-side viscous friction, N·m·s/rad.
    pub viscous: f64,
    /// rad/s
    pub rate_limit: f64,
    /// rad/s²
    pub accel_limit: f64,
}

impl Default for SteeringControlConfig {
    fn default() -> Self {
        Self {
            kp: 60.0,
            kd: 8.0,
            gear_ratio: 50.0,
            motor_torque_limit: 2.0,
            inertia: 0.6,
            viscous: 2.0,
            rate_limit: 0.5,
            accel_limit: 1.0,
        }
    }
}

/// PD tracking of the trajectory sampled at `t`. An empty trajectory leaves
/// the detent brake engaged: zero torque, position held.
pub fn step_steering_controller(
    state: &MotorState,
    traj: &SteeringTrajectory,
    t: f64,
    dt: f64,
    cfg: &SteeringControlConfig,
) -> (f64, MotorState) {
    step_steering_controller_loaded(state, traj, t, 0.0, dt, cfg)
}

pub fn step_steering_controller_loaded(
    state: &MotorState,
    traj: &SteeringTrajectory,
    t: f64,
    disturbance: f64,
    dt: f64,
    cfg: &SteeringControlConfig,
) -> (f64, MotorState) {
    if traj.is_empty() {
        let mut held = *state;
        held.applied_torque = 0.0;
        held.angular_velocity = 0.0;
        return (0.0, held);
    }
    let (ref_angle, ref_rate) = traj.sample(t);
    let err = ref_angle - state.angle;
    let derr = ref_rate - state.angular_velocity;
    let tau = (cfg.kp * err + cfg.kd * derr).clamp(-cfg.motor_torque_limit, cfg.motor_torque_limit);
    let out_torque = cfg.gear_ratio * tau - disturbance;
    let mut next = *state;
    next.applied_torque = tau;
    next.angular_velocity = (state.angular_velocity + dt * out_torque / cfg.inertia)
        / (1.0 + dt * cfg.viscous / cfg.inertia);
    next.angle = state.angle + next.angular_velocity * dt;
    (tau, next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultFlag {
    Overspeed,
    Overtorque,
    StallDetected,
    SteeringLimit,
    TrackingError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fault {
    pub kind: FaultFlag,
    pub wheel: usize,
}

/// Active faults with the wheel that raised each one, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultSet(Vec<Fault>);

impl FaultSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: FaultFlag, wheel: usize) {
        let f = Fault { kind, wheel };
        if let Err(pos) = self.0.binary_search(&f) {
            self.0.insert(pos, f);
        }
    }

    pub fn contains(&self, kind: FaultFlag) -> bool {
        self.0.iter().any(|f| f.kind == kind)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fault> {
        self.0.iter()
    }

    pub fn merge(&mut self, other: &FaultSet) {
        for f in other.iter() {
            self.insert(f.kind, f.wheel);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultLimits {
    /// rad/s; overspeed trips above 1.05× this
    pub max_wheel_speed: f64,
    pub max_torque: f64,
    /// consecutive 1 kHz ticks
    pub window: u32,
    /// rad, added to pi/2 before SteeringLimit trips
    pub steering_margin: f64,
    /// rad
    pub tracking_tolerance: f64,
}

impl Default for FaultLimits {
    fn default() -> Self {
        Self {
            max_wheel_speed: 3.0 / 3.6 / 0.306,
            max_torque: 80.0,
            window: 50,
            steering_margin: 0.5f64.to_radians(),
            tracking_tolerance: 5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelSample {
    pub angular_velocity: f64,
    pub torque: f64,
    pub clamp_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SteeringSample {
    pub angle: f64,
    pub reference: f64,
}

/// Windowed monitors over consecutive ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultMonitor {
    pub limits: FaultLimits,
    clamp_ticks: [u32; WHEEL_COUNT],
    stall_ticks: [u32; WHEEL_COUNT],
    tracking_ticks: [u32; WHEEL_COUNT],
}

impl FaultMonitor {
    pub fn new(limits: FaultLimits) -> Self {
        assert!(limits.window >= 1, "fault window must be at least one tick");
        Self {
            limits,
            clamp_ticks: [0; WHEEL_COUNT],
            stall_ticks: [0; WHEEL_COUNT],
            tracking_ticks: [0; WHEEL_COUNT],
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.limits);
    }

    /// Evaluates every monitor on the latest tick.
    pub fn monitor_faults(
        &mut self,
        wheels: &[WheelSample; WHEEL_COUNT],
        steering: &[SteeringSample; WHEEL_COUNT],
    ) -> FaultSet {
        let l = self.limits;
        let mut set = FaultSet::new();
        let bump = |c: &mut u32, cond: bool| *c = if cond { c.saturating_add(1) } else { 0 };
        for i in 0..WHEEL_COUNT {
            let w = wheels[i];
            if w.angular_velocity.abs() > 1.05 * l.max_wheel_speed {
                set.insert(FaultFlag::Overspeed, i);
            }
            bump(&mut self.clamp_ticks[i], w.clamp_active);
            if self.clamp_ticks[i] > l.window {
                set.insert(FaultFlag::Overtorque, i);
            }
            bump(
                &mut self.stall_ticks[i],
                w.torque.abs() > 0.9 * l.max_torque && w.angular_velocity.abs() < 0.01,
            );
            if self.stall_ticks[i] >= l.window {
                set.insert(FaultFlag::StallDetected, i);
            }
            let s = steering[i];
            if s.angle.abs() > FRAC_PI_2 + l.steering_margin {
                set.insert(FaultFlag::SteeringLimit, i);
            }
            bump(&mut self.tracking_ticks[i], (s.reference - s.angle).abs() > l.tracking_tolerance);
            if self.tracking_ticks[i] >= l.window {
                set.insert(FaultFlag::TrackingError, i);
            }
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_setpoint_from_rest_is_fixpoint() {
        let cfg = WheelControlConfig::default();
        let s = MotorState::default();
        let (tau, next) = step_wheel_controller(&s, 0.0, 0.001, &cfg);
        assert_eq!(tau, 0.0);
        assert_eq!(next, s);
    }

    #[test]
    fn torque_never_exceeds_limit_under_saturation() {
        let cfg = WheelControlConfig::default();
        let mut s = MotorState::default();
        let mut max_i: f64 = 0.0;
        // 10 s against a locked rotor
        for _ in 0..10_000 {
            let (tau, mut next) = step_wheel_controller_loaded(&s, 2.7, 0.0, 0.001, &cfg);
            assert!(tau.abs() <= 80.0);
            next.angular_velocity = 0.0;
            max_i = max_i.max(next.integrator.abs());
            s = next;
        }
        assert!(max_i <= cfg.integrator_bound());
        assert!(s.applied_torque.abs() <= 80.0);
    }

    #[test]
    fn trajectory_examples() {
        let t = plan_steering_trajectory(0.3, 0.3, 0.5, 1.0).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.duration(), 0.0);
        assert!(t.knots().is_empty());

        // accel 0.5 s covering 0.125 rad each end, cruise (pi/2 - 0.25)/0.5
        let t = plan_steering_trajectory(0.0, FRAC_PI_2, 0.5, 1.0).unwrap();
        assert!((t.duration() - 3.641_592_653_589_793).abs() < 1e-12);
        assert_eq!(t.knots().len(), 4);

        let t = plan_steering_trajectory(0.0, 0.1, 0.5, 1.0).unwrap();
        assert!((t.duration() - 0.632_455_532_033_675_9).abs() < 1e-12);
        assert_eq!(t.t_cruise, 0.0);
    }

    #[test]
    fn goal_out_of_range_rejected() {
        assert_eq!(
            plan_steering_trajectory(0.0, 1.7, 0.5, 1.0),
            Err(ControlError::GoalOutOfRange(1.7))
        );
    }

    #[test]
    fn trajectory_endpoints_match() {
        let t = plan_steering_trajectory(0.4, -1.2, 0.5, 1.0).unwrap();
        assert_eq!(t.sample(0.0).0, 0.4);
        assert_eq!(t.sample(t.duration()).0, -1.2);
        let (a, _) = t.sample(t.duration() - 1e-9);
        assert!((a + 1.2).abs() < 1e-9);
    }

    #[test]
    fn empty_trajectory_gives_zero_torque() {
        let cfg = SteeringControlConfig::default();
        let s = MotorState::at_angle(0.2);
        let (tau, next) = step_steering_controller(&s, &SteeringTrajectory::hold(0.2), 0.0, 0.001, &cfg);
        assert_eq!(tau, 0.0);
        assert_eq!(next.angle, 0.2);
    }

    #[test]
    fn fault_set_is_sorted_and_deduplicated() {
        let mut f = FaultSet::new();
        f.insert(FaultFlag::TrackingError, 2);
        f.insert(FaultFlag::Overspeed, 1);
        f.insert(FaultFlag::TrackingError, 2);
        assert_eq!(f.len(), 2);
        assert_eq!(f.iter().next().unwrap().kind, FaultFlag::Overspeed);
    }

    #[test]
    fn nominal_cruise_has_no_faults() {
        let mut m = FaultMonitor::new(FaultLimits::default());
        let w = [WheelSample { angular_velocity: 1.6, torque: 20.0, clamp_active: false }; 4];
        let s = [SteeringSample { angle: 0.1, reference: 0.1 }; 4];
        for _ in 0..1000 {
            assert!(m.monitor_faults(&w, &s).is_empty());
        }
    }

    #[test]
    fn spoofed_steering_sensor_trips_next_tick() {
        let mut m = FaultMonitor::new(FaultLimits::default());
        let w = [WheelSample::default(); 4];
        let mut s = [SteeringSample::default(); 4];
        s[3] = SteeringSample { angle: 95f64.to_radians(), reference: 95f64.to_radians() };
        let f = m.monitor_faults(&w, &s);
        assert!(f.contains(FaultFlag::SteeringLimit));
        assert_eq!(f.iter().next().unwrap().wheel, 3);
    }

    #[test]
    fn overtorque_after_window() {
        let mut m = FaultMonitor::new(FaultLimits { window: 5, ..FaultLimits::default() });
        let w = [WheelSample { angular_velocity: 1.0, torque: 80.0, clamp_active: true }; 4];
        let s = [SteeringSample::default(); 4];
        for _ in 0..5 {
            assert!(!m.monitor_faults(&w, &s).contains(FaultFlag::Overtorque));
        }
        assert!(m.monitor_faults(&w, &s).contains(FaultFlag::Overtorque));
    }
}
