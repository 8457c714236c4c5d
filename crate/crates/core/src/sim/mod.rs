//! Deterministic quasi-static simulator.
//!
//! One tick: scripted commands, manager step, steering replans, contact and
//! traction solve at the current pose, controller substeps, then body motion
//! from the measured wheel states (or the gait) when traction holds.

mod obstacle;
mod run;
mod scenario;

pub use obstacle::{obstacle_traversal_check, LimitingFactor, Traversal};
pub use run::{run_scenario, Decimator, Metrics, TerminalEvent};
pub use scenario::{DragSpec, PayloadSpec, Scenario, ScenarioError, ScriptEntry, StartSpec, SCENARIO_SCHEMA};

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::contact::{fit_plane, solve_loads, LoadSolution};
use crate::control::{
    plan_steering_trajectory, step_steering_controller, step_wheel_controller_loaded, FaultLimits,
    FaultMonitor, FaultSet, MotorState, SteeringControlConfig, SteeringSample, SteeringTrajectory,
    WheelControlConfig, WheelSample,
};
use crate::kinematics::{fit_twist, WheelSetpoint, WheelSetpoints};
use crate::manager::{Ack, Command, Feedback, GaitCommand, LocomotionState, Manager};
use crate::math;
use crate::model::{max_wheel_angular_speed, BodyTwist, Pose2D, RoverGeometry, WHEEL_COUNT};
use crate::suspension::{
    active_cog_shift, body_tilt_from_offsets, compute_cog, passive_deflection_from_load, stability_margin,
    tilt_rotation, SuspensionUnit,
};
use crate::telemetry::{TelemetryRecord, WheelTelemetry};

/// Contact, load and traction state evaluated at the start of a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactEval {
    pub loads: LoadSolution,
    /// Ground plane slope along body x and y.
    pub gradient: [f64; 2],
    pub margin: f64,
    pub traction: [Vector2<f64>; WHEEL_COUNT],
    pub slip: bool,
    pub planted: [bool; WHEEL_COUNT],
    pub gait_feasible: [bool; WHEEL_COUNT],
    pub tilt: (f64, f64),
    pub contact_loss: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Stats {
    pub distance: f64,
    pub slip_sum: f64,
    pub slip_samples: u64,
    pub slip_ticks: u64,
    pub min_margin: f64,
    pub max_torque: f64,
    pub energy: f64,
    pub max_drawbar: f64,
    pub contact_loss_events: u64,
    pub start: [f64; 3],
    pub position: [f64; 3],
}

/// Outcome of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: TelemetryRecord,
    pub terminal: Option<TerminalEvent>,
}

pub struct World {
    scenario: Scenario,
    geom: RoverGeometry,
    manager: Manager,
    wheel_cfg: WheelControlConfig,
    steer_cfg: SteeringControlConfig,
    wheels: [MotorState; WHEEL_COUNT],
    steer: [MotorState; WHEEL_COUNT],
    traj: [SteeringTrajectory; WHEEL_COUNT],
    traj_t: [f64; WHEEL_COUNT],
    monitor: FaultMonitor,
    faults: FaultSet,
    units: [SuspensionUnit; WHEEL_COUNT],
    gait_feasible: [bool; WHEEL_COUNT],
    pose: Pose2D,
    odom: Pose2D,
    tick: u64,
    script_pos: usize,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    events: Vec<String>,
    shift_warned: bool,
    pub(crate) stats: Stats,
}

/// A swing wheel must shed at least this share of its load.
const SWING_UNLOAD_LIMIT: f64 = 0.5;

fn rot(heading: f64, v: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = (math::sin(heading), math::cos(heading));
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let geom = scenario.geometry()?;
        let manager = Manager::new(scenario.manager, geom.clone(), scenario.start.deployed, scenario.start.mode);
        let angles = manager.steer_goals();
        let limits = FaultLimits {
            max_wheel_speed: max_wheel_angular_speed(&geom.wheel),
            max_torque: geom.wheel.max_torque,
            ..FaultLimits::default()
        };
        let wheel_cfg = WheelControlConfig { torque_limit: geom.wheel.max_torque, ..Default::default() };
        let noise = (scenario.encoder_noise > 0.0)
            .then(|| Normal::new(0.0, scenario.encoder_noise).expect("validated noise"));
        let pose = scenario.start.pose;
        let mut world = Self {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            units: [SuspensionUnit::from_params(&scenario.suspension); WHEEL_COUNT],
            geom,
            manager,
            wheel_cfg,
            steer_cfg: SteeringControlConfig::default(),
            wheels: [MotorState::default(); WHEEL_COUNT],
            steer: angles.map(MotorState::at_angle),
            traj: angles.map(SteeringTrajectory::hold),
            traj_t: [0.0; WHEEL_COUNT],
            monitor: FaultMonitor::new(limits),
            faults: FaultSet::new(),
            gait_feasible: [false; WHEEL_COUNT],
            pose,
            odom: pose,
            tick: 0,
            script_pos: 0,
            noise,
            events: Vec::new(),
            shift_warned: false,
            stats: Stats { min_margin: f64::INFINITY, ..Default::default() },
            scenario,
        };
        // Settle suspension deflections for the initial pose.
        for _ in 0..3 {
            let eval = world.evaluate_contact(world.manager.lift(), None);
            world.apply_deflections(&eval, None);
            world.gait_feasible = eval.gait_feasible;
        }
        let z = world.ground_height();
        world.stats.start = [pose.x, pose.y, z];
        world.stats.position = world.stats.start;
        Ok(world)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn geometry(&self) -> &RoverGeometry {
        &self.geom
    }

    pub fn state(&self) -> &LocomotionState {
        self.manager.state()
    }

    pub fn pose(&self) -> Pose2D {
        self.pose
    }

    pub fn odometry(&self) -> Pose2D {
        self.odom
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.scenario.total_ticks()
    }

    fn ground_height(&self) -> f64 {
        self.scenario.terrain.height(self.pose.x, self.pose.y)
    }

    fn feedback(&self) -> Feedback {
        Feedback {
            drive_speeds: self.wheels.map(|w| w.angular_velocity),
            steer_angles: self.steer.map(|s| s.angle),
            faults: self.faults.clone(),
            gait_feasible: self.gait_feasible,
        }
    }

    /// Hands a command to the manager; the outcome is also logged as an event.
    pub fn command(&mut self, cmd: Command) -> Ack {
        let ack = self.manager.handle_command(cmd, &self.feedback());
        self.events.push(if ack.accepted {
            format!("cmd:{}", cmd.name())
        } else {
            format!("cmd:{}:rejected:{}", cmd.name(), ack.reason)
        });
        ack
    }

    fn mass(&self) -> f64 {
        self.geom.total_mass()
    }

    /// Loads, stability and traction at the current pose.
    pub fn evaluate_contact(&self, lift: f64, gait: Option<GaitCommand>) -> ContactEval {
        let g = &self.geom;
        let r = g.wheel_radius();
        let pos = &g.wheel_positions;
        let heading = self.pose.heading;
        let centre = Vector2::new(self.pose.x, self.pose.y);
        let ground: [f64; WHEEL_COUNT] = std::array::from_fn(|i| {
            let c = centre + rot(heading, pos[i]);
            let a = heading + self.steer[i].angle;
            let dir = Vector2::new(math::cos(a), math::sin(a));
            self.scenario.terrain.wheel_hub_height(c, dir, r) - r
        });
        let [_, ga, gb] = fit_plane(pos, &ground);
        let grad = math::hypot(ga, gb);
        let slope = math::atan(grad);
        let downhill = if grad > 0.0 { math::atan2(-gb, -ga) } else { 0.0 };

        let cog = compute_cog(g, &self.units);
        let mean_rise = self.units.iter().map(|u| u.wheel_rise()).sum::<f64>() / WHEEL_COUNT as f64;
        let mut cog_rel = nalgebra::Vector3::new(cog.x, cog.y, cog.z - mean_rise);
        let tilt = if self.units.iter().any(|u| u.active_offset != 0.0) && gait.is_none() {
            body_tilt_from_offsets(g, &self.units)
        } else {
            (0.0, 0.0)
        };
        if tilt != (0.0, 0.0) {
            cog_rel = tilt_rotation(tilt.0, tilt.1) * cog_rel;
        }

        let weight = self.mass() * self.scenario.gravity * lift;
        let w_normal = weight * math::cos(slope);
        let w_tangent = weight * math::sin(slope);
        let down = Vector2::new(math::cos(downhill), math::sin(downhill));
        let cop = Vector2::new(cog_rel.x, cog_rel.y) + down * (cog_rel.z * math::tan(slope));
        let tire = g.wheel.radial_stiffness.mean();
        let spring = self.units[0].spring_rate / (self.units[0].link_length * self.units[0].link_length);
        let k = 1.0 / (1.0 / spring + 1.0 / tire);

        let free = solve_loads(pos, &ground, k, w_normal, cop, &[None; WHEEL_COUNT]);
        // Lightest load each wheel can be brought to with the other three
        // still pressing on the ground.
        let residual = self.scenario.manager.gait.residual_load * w_normal;
        let supported = |i: usize, load: f64| {
            let mut fixed = [None; WHEEL_COUNT];
            fixed[i] = Some(load);
            let s = solve_loads(pos, &ground, k, w_normal, cop, &fixed);
            !s.unsupported && (0..WHEEL_COUNT).all(|j| j == i || s.normal[j] > 0.0)
        };
        let swing_load: [f64; WHEEL_COUNT] = std::array::from_fn(|i| {
            let n0 = free.normal[i];
            let lo = residual.min(n0);
            if supported(i, lo) || !supported(i, n0) {
                return lo;
            }
            let (mut a, mut b) = (lo, n0);
            for _ in 0..40 {
                let m = 0.5 * (a + b);
                if supported(i, m) {
                    b = m;
                } else {
                    a = m;
                }
            }
            (b + 0.01 * w_normal).min(n0)
        });
        let gait_feasible: [bool; WHEEL_COUNT] = std::array::from_fn(|i| {
            let n0 = free.normal[i];
            n0 > 0.0 && swing_load[i] <= SWING_UNLOAD_LIMIT * n0 && supported(i, swing_load[i])
        });
        let loads = match gait {
            Some(gc) => {
                let n0 = free.normal[gc.swing];
                let target = n0 + (swing_load[gc.swing] - n0) * gc.unload;
                let mut fixed = [None; WHEEL_COUNT];
                fixed[gc.swing] = Some(target);
                solve_loads(pos, &ground, k, w_normal, cop, &fixed)
            }
            None => free,
        };

        let contacts: Vec<Vector2<f64>> =
            (0..WHEEL_COUNT).filter(|&i| loads.in_contact[i]).map(|i| pos[i]).collect();
        let margin = stability_margin(cog_rel, &contacts, slope, downhill).map_or(-1.0, |rep| rep.margin);

        // Ground forces needed to hold the body against gravity, drag and
        // rolling resistance, shared in proportion to load.
        let walking = gait.is_some();
        let drag = self.scenario.drag.map_or(0.0, |d| d.at(self.time()));
        let mut external = down * w_tangent + Vector2::new(-drag, 0.0);
        let crr = self.scenario.rolling_resistance;
        let mut planted = [false; WHEEL_COUNT];
        let mut bearing = [false; WHEEL_COUNT];
        for i in 0..WHEEL_COUNT {
            let swing = gait.is_some_and(|gc| gc.swing == i);
            bearing[i] = loads.in_contact[i] && !swing;
            planted[i] = walking && bearing[i];
            let w = self.wheels[i].angular_velocity;
            if bearing[i] && !walking && w != 0.0 && crr > 0.0 {
                let a = self.steer[i].angle;
                external -= Vector2::new(math::cos(a), math::sin(a)) * (crr * loads.normal[i] * w.signum());
            }
        }
        let demand = -external;
        let share: f64 = (0..WHEEL_COUNT).filter(|&i| bearing[i]).map(|i| loads.normal[i]).sum();
        let mu = if walking { self.scenario.planted_mu() } else { self.scenario.mu };
        let need = demand.norm();
        let slip = lift >= 1.0 && need > mu * share;
        let traction: [Vector2<f64>; WHEEL_COUNT] = std::array::from_fn(|i| {
            if !bearing[i] || share <= 0.0 {
                Vector2::zeros()
            } else if slip {
                demand * (mu * loads.normal[i] / need)
            } else {
                demand * (loads.normal[i] / share)
            }
        });

        let extension = self.units[0].link_length * math::sin(self.units[0].travel[0].abs());
        let contact_loss = if lift >= 1.0 {
            (0..WHEEL_COUNT).filter(|&i| !loads.in_contact[i] && loads.hang[i] > extension).collect()
        } else {
            Vec::new()
        };

        ContactEval {
            loads,
            gradient: [ga, gb],
            margin,
            traction,
            slip,
            planted,
            gait_feasible,
            tilt,
            contact_loss,
        }
    }

    fn apply_deflections(&mut self, eval: &ContactEval, gait: Option<GaitCommand>) {
        for i in 0..WHEEL_COUNT {
            let d = passive_deflection_from_load(&self.units[i], eval.loads.normal[i]);
            self.units[i].passive_deflection = d.angle;
            self.units[i].active_offset = 0.0;
        }
        if let (Some(shift), None) = (self.scenario.cog_shift, gait) {
            let cog = compute_cog(&self.geom, &self.units);
            let rise = self.units.iter().map(|u| u.wheel_rise()).sum::<f64>() / WHEEL_COUNT as f64;
            match active_cog_shift(Vector2::from(shift), cog.z - rise, &self.geom, &self.units) {
                Ok(off) => {
                    for (u, o) in self.units.iter_mut().zip(off) {
                        u.active_offset = o;
                    }
                }
                Err(e) => {
                    if !self.shift_warned {
                        self.events.push(format!("cog_shift:{e}"));
                        self.shift_warned = true;
                    }
                }
            }
        }
    }

    /// Advances one tick and returns its telemetry.
    pub fn step(&mut self) -> StepOutcome {
        let dt = self.scenario.dt;
        let now = self.time();
        while let Some(entry) = self.scenario.script.get(self.script_pos) {
            if entry.t > now + 1e-9 {
                break;
            }
            let cmd = entry.command;
            self.script_pos += 1;
            self.command(cmd);
        }

        let out = self.manager.step(&self.feedback(), dt);
        self.events.extend(out.events.iter().cloned());
        if out.reset_faults {
            self.monitor.reset();
            self.faults = FaultSet::new();
        }
        for i in 0..WHEEL_COUNT {
            let goal = out.setpoints[i].steer_angle;
            if goal != self.traj[i].goal {
                if let Ok(t) = plan_steering_trajectory(
                    self.steer[i].angle,
                    goal,
                    self.steer_cfg.rate_limit,
                    self.steer_cfg.accel_limit,
                ) {
                    self.traj[i] = t;
                    self.traj_t[i] = 0.0;
                }
            }
        }

        let eval = self.evaluate_contact(out.lift, out.gait);
        self.gait_feasible = eval.gait_feasible;
        let r = self.geom.wheel_radius();
        let load_torque: [f64; WHEEL_COUNT] = std::array::from_fn(|i| {
            let a = self.steer[i].angle;
            eval.traction[i].dot(&Vector2::new(math::cos(a), math::sin(a))) * r
        });

        let h = dt / self.scenario.substeps as f64;
        let mut tick_faults = FaultSet::new();
        for _ in 0..self.scenario.substeps {
            let mut ws = [WheelSample::default(); WHEEL_COUNT];
            let mut ss = [SteeringSample::default(); WHEEL_COUNT];
            for i in 0..WHEEL_COUNT {
                self.traj_t[i] += h;
                let (_, s) = step_steering_controller(&self.steer[i], &self.traj[i], self.traj_t[i], h, &self.steer_cfg);
                self.steer[i] = s;
                ss[i] = SteeringSample { angle: s.angle, reference: self.traj[i].sample(self.traj_t[i]).0 };
                let (tau, w) = step_wheel_controller_loaded(
                    &self.wheels[i],
                    out.setpoints[i].drive_speed,
                    load_torque[i],
                    h,
                    &self.wheel_cfg,
                );
                self.wheels[i] = w;
                ws[i] = WheelSample {
                    angular_velocity: w.angular_velocity,
                    torque: tau,
                    clamp_active: tau.abs() >= self.wheel_cfg.torque_limit,
                };
                self.stats.energy += (tau * w.angular_velocity).abs() * h;
                self.stats.max_torque = self.stats.max_torque.max(tau.abs());
            }
            tick_faults.merge(&self.monitor.monitor_faults(&ws, &ss));
        }
        self.faults = tick_faults;

        // Body motion.
        let deployed = out.lift >= 1.0 && self.manager.state().is_deployed();
        let mode = self.manager.mode();
        let measured = WheelSetpoints(std::array::from_fn(|i| WheelSetpoint {
            steer_angle: self.steer[i].angle,
            drive_speed: self.wheels[i].angular_velocity,
        }));
        let (truth, estimate) = match out.gait {
            Some(gc) => {
                let t = BodyTwist::new(gc.body_speed, 0.0, 0.0);
                (if eval.slip { BodyTwist::ZERO } else { t }, t)
            }
            None if deployed => {
                let slip_factor = self.scenario.slip_factor;
                let truth = fit_twist(&measured, mode, &self.geom, slip_factor).unwrap_or(BodyTwist::ZERO);
                let estimate = match self.noise {
                    Some(n) => {
                        let mut noisy = measured;
                        for i in 0..WHEEL_COUNT {
                            noisy[i].drive_speed += n.sample(&mut self.rng);
                        }
                        fit_twist(&noisy, mode, &self.geom, slip_factor).unwrap_or(BodyTwist::ZERO)
                    }
                    None => truth,
                };
                (if eval.slip { BodyTwist::ZERO } else { truth }, estimate)
            }
            None => (BodyTwist::ZERO, BodyTwist::ZERO),
        };
        let [ga, gb] = eval.gradient;
        let kx = 1.0 / (1.0 + ga * ga).sqrt();
        let ky = 1.0 / (1.0 + gb * gb).sqrt();
        let advance = |p: Pose2D, t: BodyTwist| {
            let (dx, dy) = (t.vx * kx * dt, t.vy * ky * dt);
            (p.compose(dx, dy, t.omega * dt), dx, dy)
        };
        let (pose, dx, dy) = advance(self.pose, truth);
        self.pose = pose;
        self.odom = advance(self.odom, estimate).0;
        let dz = ga * dx + gb * dy;
        self.stats.distance += (dx * dx + dy * dy + dz * dz).sqrt();
        self.stats.position = [self.pose.x, self.pose.y, self.stats.position[2] + dz];

        // Slip statistics.
        let mut any_slip = false;
        for i in 0..WHEEL_COUNT {
            let w = self.wheels[i].angular_velocity;
            if !eval.loads.in_contact[i] || (w * r).abs() <= 1e-6 || out.gait.is_some() {
                continue;
            }
            let v = truth.point_velocity(&self.geom.wheel_positions[i]).norm();
            self.stats.slip_sum += (1.0 - v / (w * r).abs()).clamp(0.0, 1.0);
            self.stats.slip_samples += 1;
        }
        if eval.slip {
            any_slip = true;
            self.stats.slip_ticks += 1;
        }
        if let Some(d) = self.scenario.drag {
            let force = d.at(now);
            if deployed && !any_slip && force > 0.0 {
                self.stats.max_drawbar = self.stats.max_drawbar.max(force);
            }
        }

        self.apply_deflections(&eval, out.gait);
        if let Some(gc) = out.gait {
            // The actuator takes up the spring's extension so the swing wheel
            // keeps its height while unloading.
            let u = self.units[gc.swing];
            let free = self.evaluate_contact(out.lift, None).loads.normal[gc.swing];
            let full = passive_deflection_from_load(&u, free).angle;
            self.units[gc.swing].active_offset = full - u.passive_deflection;
        }

        for &i in &eval.contact_loss {
            self.events.push(format!("contact_loss:{i}"));
            self.stats.contact_loss_events += 1;
        }
        let mut terminal = None;
        if deployed {
            self.stats.min_margin = self.stats.min_margin.min(eval.margin);
            if eval.margin < 0.0 {
                self.events.push("tip_over".into());
                terminal = Some(TerminalEvent::TipOver);
            }
        }
        if terminal.is_none() {
            if let LocomotionState::Fault { .. } = self.manager.state() {
                terminal = Some(TerminalEvent::Fault);
            }
        }

        self.tick += 1;
        let wheels: [WheelTelemetry; WHEEL_COUNT] = std::array::from_fn(|i| WheelTelemetry {
            steer_angle: self.steer[i].angle,
            drive_speed: self.wheels[i].angular_velocity,
            torque: self.wheels[i].applied_torque,
            normal_force: eval.loads.normal[i],
            traction: eval.traction[i].norm(),
            slip: eval.slip && eval.loads.in_contact[i] && eval.traction[i] != Vector2::zeros(),
            planted: eval.planted[i],
            deflection: self.units[i].passive_deflection,
            offset: self.units[i].active_offset,
        });
        let record = TelemetryRecord {
            tick: self.tick,
            time: self.time(),
            pose: self.pose,
            pitch: math::atan(ga) - eval.tilt.0,
            roll: math::atan(gb) + eval.tilt.1,
            wheels,
            mode: self.manager.mode(),
            state: self.manager.state().clone(),
            faults: self.faults.clone(),
            margin: eval.margin,
            odometry: self.odom,
            events: std::mem::take(&mut self.events),
        };
        StepOutcome { record, terminal }
    }
}

#[cfg(test)]
mod tests;
