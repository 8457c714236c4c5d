//! Command intake and sequencing: mode transitions, deploy/stow, emergency
//! stop and the wheel-walking gait.

use serde::{Deserialize, Serialize};

use crate::control::{Fault, FaultFlag, FaultSet};
use crate::kinematics::{inverse_kinematics, mode_entry_angles, WheelSetpoint, WheelSetpoints};
use crate::model::{BodyTwist, LocomotionMode, RoverGeometry, WHEEL_COUNT};
use crate::suspension::STOW_ANGLES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Twist(BodyTwist),
    SetMode { mode: LocomotionMode },
    Deploy,
    Stow,
    WheelWalkStart,
    WheelWalkStop,
    #[serde(rename = "estop")]
    EStop,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Twist(_) => "twist",
            Command::SetMode { .. } => "set_mode",
            Command::Deploy => "deploy",
            Command::Stow => "stow",
            Command::WheelWalkStart => "wheel_walk_start",
            Command::WheelWalkStop => "wheel_walk_stop",
            Command::EStop => "estop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitStage {
    Prepare,
    Unload,
    Move,
    Reload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitPhase {
    /// Completed phases since the gait started.
    pub index: u32,
    pub wheel: Option<usize>,
    pub stage: GaitStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocomotionState {
    Stowed,
    Deploying,
    Idle,
    Driving { mode: LocomotionMode },
    ModeTransition { from: LocomotionMode, to: LocomotionMode },
    WheelWalking { phase: GaitPhase },
    Stowing,
    Fault { faults: FaultSet },
}

impl LocomotionState {
    pub fn name(&self) -> &'static str {
        match self {
            LocomotionState::Stowed => "stowed",
            LocomotionState::Deploying => "deploying",
            LocomotionState::Idle => "idle",
            LocomotionState::Driving { .. } => "driving",
            LocomotionState::ModeTransition { .. } => "mode_transition",
            LocomotionState::WheelWalking { .. } => "wheel_walking",
            LocomotionState::Stowing => "stowing",
            LocomotionState::Fault { .. } => "fault",
        }
    }

    /// Wheels unfolded and carrying the body.
    pub fn is_deployed(&self) -> bool {
        !matches!(self, LocomotionState::Stowed | LocomotionState::Deploying | LocomotionState::Stowing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    /// Forward step of each wheel per cycle, m.
    pub stride: f64,
    /// Duration of one single-wheel phase, s.
    pub phase_duration: f64,
    pub unload_fraction: f64,
    pub reload_fraction: f64,
    /// Load left on the swing wheel, fraction of the normal weight.
    pub residual_load: f64,
    pub order: [usize; WHEEL_COUNT],
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            stride: 0.2,
            phase_duration: 1.6,
            unload_fraction: 0.2,
            reload_fraction: 0.2,
            residual_load: 0.05,
            order: [0, 3, 1, 2],
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.stride >= 0.0) || !(self.phase_duration > 0.0) {
            return Err("gait stride must be >= 0 and phase_duration > 0".into());
        }
        let f = self.unload_fraction + self.reload_fraction;
        if !(self.unload_fraction >= 0.0 && self.reload_fraction >= 0.0 && f < 1.0) {
            return Err("gait unload + reload fractions must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.residual_load) {
            return Err("gait residual_load must be in [0, 1)".into());
        }
        let mut seen = [false; WHEEL_COUNT];
        for &w in &self.order {
            if w >= WHEEL_COUNT || seen[w] {
                return Err("gait order must be a permutation of 0..4".into());
            }
            seen[w] = true;
        }
        Ok(())
    }

    pub fn move_time(&self) -> f64 {
        self.phase_duration * (1.0 - self.unload_fraction - self.reload_fraction)
    }

    pub fn cycle_time(&self) -> f64 {
        self.phase_duration * WHEEL_COUNT as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    /// Body twist ramp limits while driving, m/s² and rad/s².
    pub linear_accel: f64,
    pub angular_accel: f64,
    /// Ramp limits after an emergency stop.
    pub estop_linear_decel: f64,
    pub estop_angular_decel: f64,
    /// Wheel speed above which an emergency stop latches a fault, rad/s.
    pub estop_fault_speed: f64,
    /// Drive speed below which steering may move, rad/s.
    pub interlock_speed: f64,
    /// Steering is settled within this angle of its goal, rad.
    pub steer_tolerance: f64,
    /// Suspension raise/lower time during deploy and stow, s.
    pub lift_time: f64,
    pub gait: GaitParams,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            linear_accel: 0.5,
            angular_accel: 0.5,
            estop_linear_decel: 5.0,
            estop_angular_decel: 5.0,
            estop_fault_speed: 2.5,
            interlock_speed: 0.01,
            steer_tolerance: 0.1f64.to_radians(),
            lift_time: 3.0,
            gait: GaitParams::default(),
        }
    }
}

/// Measured state fed back from the plant each tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Feedback {
    pub drive_speeds: [f64; WHEEL_COUNT],
    pub steer_angles: [f64; WHEEL_COUNT],
    pub faults: FaultSet,
    /// Whether each wheel could be unloaded to the residual load with the
    /// other three keeping positive loads.
    pub gait_feasible: [bool; WHEEL_COUNT],
}

/// Gait demand for the plant during a walking phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitCommand {
    pub swing: usize,
    /// 0 = fully loaded, 1 = at residual load.
    pub unload: f64,
    /// Open-loop body speed along body x, m/s.
    pub body_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerOutput {
    /// Steering goals and drive speed setpoints.
    pub setpoints: WheelSetpoints,
    /// Body raise: 0 resting on the belly, 1 at ride height.
    pub lift: f64,
    pub gait: Option<GaitCommand>,
    /// Twist the drive setpoints realise, for reference.
    pub twist: BodyTwist,
    pub events: Vec<String>,
    /// Operator acknowledged a fault; the plant should clear its monitors.
    pub reset_faults: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub reason: String,
}

impl Ack {
    pub fn ok() -> Self {
        Self { accepted: true, reason: "ok".into() }
    }

    pub fn reject(reason: impl Into<String>) -> Self {
        Self { accepted: false, reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Seq {
    None,
    Stopping,
    Reorienting,
    Lifting,
    Unfolding,
    Folding,
    Lowering,
}

#[derive(Debug, Clone)]
pub struct Manager {
    cfg: ManagerConfig,
    geom: RoverGeometry,
    state: LocomotionState,
    mode: LocomotionMode,
    target: BodyTwist,
    twist: BodyTwist,
    fast_stop: bool,
    steer_goal: [f64; WHEEL_COUNT],
    lift: f64,
    seq: Seq,
    gait_clock: f64,
    reset_pending: bool,
    events: Vec<String>,
}

impl Manager {
    /// Starts stowed, or deployed and driving in `mode`.
    pub fn new(cfg: ManagerConfig, geom: RoverGeometry, deployed: bool, mode: LocomotionMode) -> Self {
        let (state, steer_goal, lift) = if deployed {
            (LocomotionState::Driving { mode }, mode_entry_angles(mode, &geom), 1.0)
        } else {
            (LocomotionState::Stowed, STOW_ANGLES, 0.0)
        };
        Self {
            cfg,
            geom,
            state,
            mode,
            target: BodyTwist::ZERO,
            twist: BodyTwist::ZERO,
            fast_stop: false,
            steer_goal,
            lift,
            seq: Seq::None,
            gait_clock: 0.0,
            reset_pending: false,
            events: Vec::new(),
        }
    }

    pub fn state(&self) -> &LocomotionState {
        &self.state
    }

    pub fn mode(&self) -> LocomotionMode {
        self.mode
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.cfg
    }

    /// Initial steering goals (the plant starts at rest on them).
    pub fn steer_goals(&self) -> [f64; WHEEL_COUNT] {
        self.steer_goal
    }

    pub fn lift(&self) -> f64 {
        self.lift
    }

    fn enter(&mut self, state: LocomotionState) {
        self.events.push(format!("state:{}", state.name()));
        self.state = state;
    }

    /// Validates a command against the current state and applies it.
    pub fn handle_command(&mut self, cmd: Command, fb: &Feedback) -> Ack {
        use LocomotionState as S;
        if let S::Fault { .. } = self.state {
            if cmd != Command::EStop {
                return Ack::reject("fault: estop to reset");
            }
        }
        match cmd {
            Command::EStop => {
                self.target = BodyTwist::ZERO;
                self.fast_stop = true;
                match &self.state {
                    S::Stowed => {}
                    S::Fault { .. } => {
                        self.twist = BodyTwist::ZERO;
                        self.reset_pending = true;
                        self.seq = Seq::None;
                        self.enter(S::Idle);
                    }
                    _ => {
                        let fast = fb
                            .drive_speeds
                            .iter()
                            .enumerate()
                            .find(|(_, w)| w.abs() > self.cfg.estop_fault_speed);
                        self.seq = Seq::None;
                        if let Some((wheel, _)) = fast {
                            let mut faults = FaultSet::new();
                            faults.insert(FaultFlag::Overspeed, wheel);
                            self.enter(S::Fault { faults });
                        } else if matches!(self.state, S::Deploying | S::Stowing) {
                            // Sequences pause where they are; the operator re-issues them.
                            self.enter(if self.lift > 0.5 { S::Idle } else { S::Stowed });
                        } else {
                            self.enter(S::Idle);
                        }
                    }
                }
                Ack::ok()
            }
            Command::Twist(t) => {
                let S::Driving { mode } = self.state else {
                    return Ack::reject(match self.state {
                        S::Stowed | S::Deploying | S::Stowing => "not deployed",
                        _ => "not driving",
                    });
                };
                match inverse_kinematics(t, mode, &self.geom) {
                    Ok(_) => {
                        self.target = t;
                        self.fast_stop = false;
                        Ack::ok()
                    }
                    Err(e) => Ack::reject(e.to_string()),
                }
            }
            Command::SetMode { mode } => match self.state {
                S::Driving { .. } | S::Idle => {
                    let from = self.mode;
                    self.target = BodyTwist::ZERO;
                    self.fast_stop = false;
                    self.seq = Seq::Stopping;
                    self.enter(S::ModeTransition { from, to: mode });
                    Ack::ok()
                }
                S::Stowed | S::Deploying | S::Stowing => Ack::reject("not deployed"),
                _ => Ack::reject(format!("mode change not allowed in {}", self.state.name())),
            },
            Command::Deploy => match self.state {
                S::Stowed => {
                    self.seq = Seq::Lifting;
                    self.enter(S::Deploying);
                    Ack::ok()
                }
                _ => Ack::reject("deploy only from stowed"),
            },
            Command::Stow => match self.state {
                S::Idle => {
                    self.seq = Seq::Folding;
                    self.enter(S::Stowing);
                    Ack::ok()
                }
                _ => Ack::reject("stow only from idle"),
            },
            Command::WheelWalkStart => match self.state {
                S::Driving { .. } | S::Idle => {
                    self.target = BodyTwist::ZERO;
                    self.fast_stop = false;
                    self.gait_clock = 0.0;
                    self.enter(S::WheelWalking {
                        phase: GaitPhase { index: 0, wheel: None, stage: GaitStage::Prepare },
                    });
                    Ack::ok()
                }
                S::Stowed | S::Deploying | S::Stowing => Ack::reject("not deployed"),
                _ => Ack::reject(format!("wheel walking not allowed in {}", self.state.name())),
            },
            Command::WheelWalkStop => match self.state {
                S::WheelWalking { .. } => {
                    self.enter(S::Idle);
                    Ack::ok()
                }
                _ => Ack::reject("not wheel walking"),
            },
        }
    }

    fn steer_settled(&self, fb: &Feedback) -> bool {
        fb.steer_angles
            .iter()
            .zip(self.steer_goal.iter())
            .all(|(a, g)| (a - g).abs() <= self.cfg.steer_tolerance)
    }

    fn ramp_twist(&mut self, dt: f64) {
        let (lin, ang) = if self.fast_stop {
            (self.cfg.estop_linear_decel, self.cfg.estop_angular_decel)
        } else {
            (self.cfg.linear_accel, self.cfg.angular_accel)
        };
        // Scale all components together so intermediate twists stay on the
        // segment between admissible endpoints.
        let d = BodyTwist::new(
            self.target.vx - self.twist.vx,
            self.target.vy - self.twist.vy,
            self.target.omega - self.twist.omega,
        );
        let need = (crate::math::hypot(d.vx, d.vy) / (lin * dt)).max(d.omega.abs() / (ang * dt));
        self.twist = if need <= 1.0 {
            self.target
        } else {
            BodyTwist::new(
                self.twist.vx + d.vx / need,
                self.twist.vy + d.vy / need,
                self.twist.omega + d.omega / need,
            )
        };
    }

    fn drive_setpoints(&mut self) -> WheelSetpoints {
        let mut sp = WheelSetpoints::default();
        let ik = if self.twist.is_zero() { None } else { inverse_kinematics(self.twist, self.mode, &self.geom).ok() };
        for i in 0..WHEEL_COUNT {
            match ik {
                Some(k) if k[i].drive_speed != 0.0 => {
                    self.steer_goal[i] = k[i].steer_angle;
                    sp[i] = k[i];
                }
                _ => sp[i] = WheelSetpoint { steer_angle: self.steer_goal[i], drive_speed: 0.0 },
            }
        }
        sp
    }

    fn hold_setpoints(&self) -> WheelSetpoints {
        WheelSetpoints(self.steer_goal.map(|g| WheelSetpoint { steer_angle: g, drive_speed: 0.0 }))
    }

    /// One manager tick.
    pub fn step(&mut self, fb: &Feedback, dt: f64) -> ManagerOutput {
        use LocomotionState as S;
        let mut gait = None;
        if !fb.faults.is_empty() && !self.reset_pending {
            match &mut self.state {
                S::Fault { faults } => faults.merge(&fb.faults),
                _ => {
                    let faults = fb.faults.clone();
                    let list: Vec<String> = faults.iter().map(fault_label).collect();
                    self.events.push(format!("fault:{}", list.join(",")));
                    self.enter(S::Fault { faults });
                }
            }
        }
        let reset_faults = std::mem::take(&mut self.reset_pending);

        let setpoints = match self.state.clone() {
            S::Fault { .. } => {
                self.target = BodyTwist::ZERO;
                self.twist = BodyTwist::ZERO;
                self.hold_setpoints()
            }
            S::Stowed => {
                self.twist = BodyTwist::ZERO;
                self.hold_setpoints()
            }
            S::Deploying => {
                match self.seq {
                    Seq::Lifting => {
                        self.lift = (self.lift + dt / self.cfg.lift_time).min(1.0);
                        if self.lift >= 1.0 {
                            self.seq = Seq::Unfolding;
                            self.steer_goal = [0.0; WHEEL_COUNT];
                        }
                    }
                    _ => {
                        self.steer_goal = [0.0; WHEEL_COUNT];
                        if self.steer_settled(fb) {
                            self.seq = Seq::None;
                            self.enter(S::Idle);
                        }
                    }
                }
                self.hold_setpoints()
            }
            S::Stowing => {
                match self.seq {
                    Seq::Lowering => {
                        self.lift = (self.lift - dt / self.cfg.lift_time).max(0.0);
                        if self.lift <= 0.0 {
                            self.seq = Seq::None;
                            self.enter(S::Stowed);
                        }
                    }
                    _ => {
                        self.steer_goal = STOW_ANGLES;
                        if self.steer_settled(fb) {
                            self.seq = Seq::Lowering;
                        }
                    }
                }
                self.hold_setpoints()
            }
            S::Idle => {
                self.target = BodyTwist::ZERO;
                self.ramp_twist(dt);
                self.drive_setpoints()
            }
            S::Driving { .. } => {
                self.ramp_twist(dt);
                self.drive_setpoints()
            }
            S::ModeTransition { to, .. } => match self.seq {
                Seq::Reorienting => {
                    self.steer_goal = mode_entry_angles(to, &self.geom);
                    if self.steer_settled(fb) {
                        self.seq = Seq::None;
                        self.mode = to;
                        self.enter(S::Driving { mode: to });
                    }
                    self.hold_setpoints()
                }
                _ => {
                    self.target = BodyTwist::ZERO;
                    self.ramp_twist(dt);
                    let sp = self.drive_setpoints();
                    let stopped = self.twist.is_zero()
                        && fb.drive_speeds.iter().all(|w| w.abs() <= self.cfg.interlock_speed);
                    if stopped {
                        self.seq = Seq::Reorienting;
                        self.events.push("interlock:released".into());
                    }
                    sp
                }
            },
            S::WheelWalking { phase } => {
                let (sp, cmd) = self.step_gait(phase, fb, dt);
                gait = cmd;
                sp
            }
        };

        ManagerOutput {
            setpoints,
            lift: self.lift,
            gait,
            twist: self.twist,
            events: std::mem::take(&mut self.events),
            reset_faults,
        }
    }

    fn step_gait(
        &mut self,
        phase: GaitPhase,
        fb: &Feedback,
        dt: f64,
    ) -> (WheelSetpoints, Option<GaitCommand>) {
        let g = self.cfg.gait;
        if phase.stage == GaitStage::Prepare {
            self.target = BodyTwist::ZERO;
            self.ramp_twist(dt);
            let stopped = self.twist.is_zero()
                && fb.drive_speeds.iter().all(|w| w.abs() <= self.cfg.interlock_speed);
            if !stopped {
                return (self.drive_setpoints(), None);
            }
            self.steer_goal = [0.0; WHEEL_COUNT];
            if self.steer_settled(fb) {
                if !self.begin_phase(0, fb) {
                    return (self.hold_setpoints(), None);
                }
            }
            return (self.hold_setpoints(), None);
        }

        self.gait_clock += dt;
        let wheel = phase.wheel.unwrap_or(g.order[0]);
        let t_unload = g.phase_duration * g.unload_fraction;
        let t_move = g.move_time();
        let t = self.gait_clock;
        let mut index = phase.index;
        let (stage, unload, moving) = if t < t_unload {
            (GaitStage::Unload, if t_unload > 0.0 { t / t_unload } else { 1.0 }, false)
        } else if t < t_unload + t_move {
            (GaitStage::Move, 1.0, true)
        } else if t < g.phase_duration {
            let t_reload = g.phase_duration - t_unload - t_move;
            (GaitStage::Reload, 1.0 - (t - t_unload - t_move) / t_reload, false)
        } else {
            index += 1;
            if self.begin_phase(index, fb) {
                return self.step_gait_entry();
            }
            return (self.hold_setpoints(), None);
        };
        if stage != phase.stage {
            self.state =
                LocomotionState::WheelWalking { phase: GaitPhase { index, wheel: Some(wheel), stage } };
        }
        let r = self.geom.wheel_radius();
        let mut sp = self.hold_setpoints();
        let body_speed = if moving && t_move > 0.0 { 0.25 * g.stride / t_move } else { 0.0 };
        if moving && t_move > 0.0 {
            sp[wheel].drive_speed = g.stride / (r * t_move);
        }
        (sp, Some(GaitCommand { swing: wheel, unload, body_speed }))
    }

    fn step_gait_entry(&mut self) -> (WheelSetpoints, Option<GaitCommand>) {
        let LocomotionState::WheelWalking { phase } = self.state else {
            return (self.hold_setpoints(), None);
        };
        let swing = phase.wheel.unwrap_or(0);
        (self.hold_setpoints(), Some(GaitCommand { swing, unload: 0.0, body_speed: 0.0 }))
    }

    /// Starts phase `index`, or aborts the gait if the next swing wheel cannot
    /// be unloaded with a positive support. Returns whether the gait continues.
    fn begin_phase(&mut self, index: u32, fb: &Feedback) -> bool {
        let g = self.cfg.gait;
        let wheel = g.order[index as usize % WHEEL_COUNT];
        self.gait_clock = 0.0;
        if !fb.gait_feasible[wheel] {
            self.events.push(format!("gait_abort:wheel {wheel}"));
            self.enter(LocomotionState::Idle);
            return false;
        }
        self.state = LocomotionState::WheelWalking {
            phase: GaitPhase { index, wheel: Some(wheel), stage: GaitStage::Unload },
        };
        true
    }
}

fn fault_label(f: &Fault) -> String {
    let kind = serde_json::to_value(f.kind).ok().and_then(|v| v.as_str().map(String::from));
    format!("{}@{}", kind.unwrap_or_default(), f.wheel)
}
