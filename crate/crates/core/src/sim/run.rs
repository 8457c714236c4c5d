use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioError, World};
use crate::model::Pose2D;
use crate::telemetry::TelemetryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalEvent {
    TipOver,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub ticks: u64,
    pub sim_time: f64,
    /// Path length over the terrain, m.
    pub distance: f64,
    /// Straight-line 3D displacement from start to end, m.
    pub net_progress: f64,
    pub final_pose: Pose2D,
    pub mean_slip_ratio: f64,
    /// Ticks in which traction saturated.
    pub slip_ticks: u64,
    pub min_margin: f64,
    pub max_torque: f64,
    /// ∫|τ·ω| dt over the four drives, J.
    pub energy: f64,
    /// Planar distance between true and odometry poses, m.
    pub odometry_drift: f64,
    /// Largest external drag held without slipping, N.
    pub max_drawbar_pull: f64,
    pub contact_loss_events: u64,
    pub terminal: Option<TerminalEvent>,
}

impl Metrics {
    pub fn from_world(world: &World, terminal: Option<TerminalEvent>) -> Self {
        let s = &world.stats;
        let d: Vec<f64> = (0..3).map(|i| s.position[i] - s.start[i]).collect();
        let pose = world.pose();
        Metrics {
            scenario: world.scenario().name.clone(),
            ticks: world.tick(),
            sim_time: world.time(),
            distance: s.distance,
            net_progress: (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
            final_pose: pose,
            mean_slip_ratio: if s.slip_samples > 0 { s.slip_sum / s.slip_samples as f64 } else { 0.0 },
            slip_ticks: s.slip_ticks,
            min_margin: if s.min_margin.is_finite() { s.min_margin } else { 0.0 },
            max_torque: s.max_torque,
            energy: s.energy,
            odometry_drift: pose.distance_to(&world.odometry()),
            max_drawbar_pull: s.max_drawbar,
            contact_loss_events: s.contact_loss_events,
            terminal,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub const CSV_HEADER: &'static str = "scenario,ticks,sim_time,distance,net_progress,final_x,final_y,final_heading,mean_slip_ratio,slip_ticks,min_margin,max_torque,energy,odometry_drift,max_drawbar_pull,contact_loss_events,terminal";

    pub fn to_csv(&self) -> String {
        let terminal = match self.terminal {
            Some(TerminalEvent::TipOver) => "tip_over",
            Some(TerminalEvent::Fault) => "fault",
            None => "",
        };
        format!(
            "{}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.scenario,
            self.ticks,
            self.sim_time,
            self.distance,
            self.net_progress,
            self.final_pose.x,
            self.final_pose.y,
            self.final_pose.heading,
            self.mean_slip_ratio,
            self.slip_ticks,
            self.min_margin,
            self.max_torque,
            self.energy,
            self.odometry_drift,
            self.max_drawbar_pull,
            self.contact_loss_events,
            terminal
        )
    }
}

/// Keeps every `every`-th record. Events from dropped records are carried
/// into the next kept one so none are lost.
#[derive(Debug, Clone)]
pub struct Decimator {
    every: u64,
    pending: Vec<String>,
}

impl Decimator {
    pub fn new(every: u64) -> Self {
        Self { every: every.max(1), pending: Vec::new() }
    }

    pub fn offer(&mut self, record: &TelemetryRecord) -> Option<TelemetryRecord> {
        if record.tick % self.every != 0 {
            self.pending.extend(record.events.iter().cloned());
            return None;
        }
        let mut kept = record.clone();
        if !self.pending.is_empty() {
            let mut events = std::mem::take(&mut self.pending);
            events.append(&mut kept.events);
            kept.events = events;
        }
        Some(kept)
    }
}

/// Runs to the scenario duration or the first terminal event. Records are
/// kept every `log_every` ticks.
pub fn run_scenario(scenario: Scenario) -> Result<(Vec<TelemetryRecord>, Metrics), ScenarioError> {
    let mut world = World::new(scenario)?;
    let every = world.scenario().log_every as u64;
    let mut decimator = Decimator::new(every);
    let mut log = Vec::with_capacity((world.scenario().total_ticks() / every + 1) as usize);
    let mut terminal = None;
    while !world.is_finished() {
        let out = world.step();
        if let Some(r) = decimator.offer(&out.record) {
            log.push(r);
        }
        if out.terminal.is_some() {
            terminal = out.terminal;
            break;
        }
    }
    let metrics = Metrics::from_world(&world, terminal);
    Ok((log, metrics))
}
