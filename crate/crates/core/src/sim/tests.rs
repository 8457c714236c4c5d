use super::*;
use crate::model::LocomotionMode;
use crate::terrain::Terrain;

fn twist_at(t: f64, vx: f64, vy: f64, omega: f64) -> ScriptEntry {
    ScriptEntry { t, command: Command::Twist(BodyTwist::new(vx, vy, omega)) }
}

#[test]
fn null_script_stays_put() {
    let (log, m) = run_scenario(Scenario::flat(2.0, 0.8)).unwrap();
    assert_eq!(log.len(), 20);
    assert_eq!(m.distance, 0.0);
    assert_eq!(m.odometry_drift, 0.0);
    assert!(m.terminal.is_none());
}

#[test]
fn static_loads_balance_weight_on_slope() {
    let mut s = Scenario::flat(0.1, 0.8);
    s.terrain = Terrain::Plane { slope_deg: 20.0, azimuth_deg: 30.0 };
    let w = World::new(s.clone()).unwrap();
    let eval = w.evaluate_contact(1.0, None);
    let total: f64 = eval.loads.normal.iter().sum();
    let expected = w.geometry().total_mass() * s.gravity * 20f64.to_radians().cos();
    assert!(((total - expected) / expected).abs() < 1e-6, "{total} vs {expected}");
}

#[test]
fn flat_crab_odometry_matches_truth() {
    let mut s = Scenario::flat(10.0, 0.8);
    s.script = vec![twist_at(0.0, 0.5, 0.0, 0.0)];
    let (log, m) = run_scenario(s).unwrap();
    let last = log.last().unwrap();
    assert!((last.pose.x - last.odometry.x).abs() < 1e-6);
    assert!(m.distance > 4.0, "{}", m.distance);
    assert!(m.slip_ticks == 0);
}

#[test]
fn traction_bound_holds() {
    let mut s = Scenario::flat(5.0, 0.4);
    s.terrain = Terrain::Plane { slope_deg: 25.0, azimuth_deg: 0.0 };
    s.log_every = 1;
    s.script = vec![twist_at(0.0, 0.3, 0.0, 0.0)];
    let (log, m) = run_scenario(s.clone()).unwrap();
    assert!(m.slip_ticks > 0);
    for r in &log {
        for w in &r.wheels {
            assert!(w.traction <= s.mu * w.normal_force + 1e-9);
        }
    }
}

#[test]
fn crab_to_point_turn_transition_ends_on_tangents() {
    let mut s = Scenario::flat(8.0, 0.8);
    s.log_every = 1;
    s.script = vec![
        twist_at(0.0, 0.3, 0.1, 0.0),
        ScriptEntry { t: 1.0, command: Command::SetMode { mode: LocomotionMode::PointTurn } },
    ];
    let (log, _) = run_scenario(s).unwrap();
    let start = log.iter().position(|r| matches!(r.state, LocomotionState::ModeTransition { .. })).unwrap();
    let end = log.iter().position(|r| r.state == LocomotionState::Driving { mode: LocomotionMode::PointTurn }).unwrap();
    let elapsed = (end - start) as f64 * 0.01;
    assert!(elapsed < 1.5 + 3.65 + 0.5, "{elapsed}");
    // Reorientation never starts while a wheel is still turning.
    for r in &log[start..end] {
        if r.wheels.iter().any(|w| w.drive_speed.abs() > 0.01) {
            assert!(r.wheels.iter().all(|w| (w.steer_angle - 0.0).abs() < 1e-3 || w.steer_angle.abs() < 0.33));
        }
    }
    let entry = crate::kinematics::mode_entry_angles(LocomotionMode::PointTurn, &RoverGeometry::default());
    let settled = &log.last().unwrap().wheels;
    for (w, e) in settled.iter().zip(entry.iter()) {
        assert!((w.steer_angle - e).abs() < 0.01f64.to_radians(), "{} vs {}", w.steer_angle, e);
    }
}

#[test]
fn encoder_noise_is_seeded() {
    let mut s = Scenario::flat(2.0, 0.8);
    s.encoder_noise = 0.05;
    s.seed = 7;
    s.script = vec![twist_at(0.0, 0.3, 0.0, 0.0)];
    let a = run_scenario(s.clone()).unwrap();
    let b = run_scenario(s.clone()).unwrap();
    assert_eq!(a, b);
    assert!(a.1.odometry_drift > 0.0);
    s.seed = 8;
    assert_ne!(run_scenario(s).unwrap().1.odometry_drift, a.1.odometry_drift);
}

#[test]
fn stowed_rover_deploys_then_stows() {
    let mut s = Scenario::flat(20.0, 0.8);
    s.start.deployed = false;
    s.log_every = 1;
    s.script = vec![
        ScriptEntry { t: 0.0, command: Command::Deploy },
        ScriptEntry { t: 9.0, command: Command::Stow },
    ];
    let (log, m) = run_scenario(s).unwrap();
    assert!(m.terminal.is_none());
    assert!(log.iter().any(|r| r.state == LocomotionState::Idle));
    assert_eq!(log.last().unwrap().state, LocomotionState::Stowed);
}
