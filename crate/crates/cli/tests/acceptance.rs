//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use emrs_core::kinematics::{forward_odometry, inverse_kinematics, mode_entry_angles, Icr, KinematicsError};
use emrs_core::manager::Command as RoverCommand;
use emrs_core::model::{BodyTwist, LocomotionMode, RoverGeometry, FRONT_LEFT};
use emrs_core::sim::{obstacle_traversal_check, LimitingFactor, Metrics, Scenario, ScriptEntry, World};
use emrs_core::suspension::SuspensionParams;
use emrs_core::telemetry::read_log;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUNDLED: [&str; 7] = [
    "flat_crab",
    "slope25",
    "slope25_lowmu",
    "step30",
    "excavation_drawbar",
    "isru_200kg_slope",
    "wheelwalk_escape",
];

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

struct RunOutput {
    code: i32,
    log: Vec<u8>,
    metrics: Metrics,
    wall: Duration,
}

fn run_cli(scenario: &Path, out: &Path) -> RunOutput {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_emrs"))
        .args(["run", "--scenario"])
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn emrs");
    let wall = start.elapsed();
    let log = std::fs::read(out.join("telemetry.jsonl")).unwrap_or_default();
    let metrics_text = std::fs::read_to_string(out.join("metrics.json")).expect("metrics.json written");
    RunOutput {
        code: status.status.code().unwrap_or(-1),
        log,
        metrics: serde_json::from_str(&metrics_text).expect("metrics parse"),
        wall,
    }
}

/// Writes a variant of a bundled scenario and runs it.
fn run_variant(dir: &Path, name: &str, edit: impl FnOnce(&mut Scenario)) -> RunOutput {
    let mut s = Scenario::load(&scenario_path(name)).unwrap();
    edit(&mut s);
    let path = dir.join(format!("{}.json", s.name));
    std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    run_cli(&path, &dir.join(&s.name))
}

struct Report {
    lines: Vec<(bool, String, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((pass, name.to_string(), detail));
    }
}

fn kinematics_round_trip(geom: &RoverGeometry) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut counts = Vec::new();
    for mode in LocomotionMode::ALL {
        let mut n = 0;
        while n < 150 {
            let twist = match mode {
                LocomotionMode::SkidSteering | LocomotionMode::AckermannTurn => {
                    BodyTwist::new(rng.gen_range(-0.8..0.8), 0.0, rng.gen_range(-0.6..0.6))
                }
                LocomotionMode::CrabTurn => BodyTwist::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), 0.0),
                LocomotionMode::PointTurn => BodyTwist::new(0.0, 0.0, rng.gen_range(-0.7..0.7)),
            };
            let sp = match inverse_kinematics(twist, mode, geom) {
                Ok(sp) => sp,
                Err(KinematicsError::SpeedLimitExceeded { .. }) => continue,
                Err(e) => return (false, format!("{mode}: {e}")),
            };
            let d = forward_odometry(&sp, mode, geom, 1.0, 1.0).unwrap();
            worst = worst.max((d.dx - twist.vx).abs()).max((d.dy - twist.vy).abs()).max((d.dheading - twist.omega).abs());
            n += 1;
        }
        counts.push(n);
    }
    let elapsed = start.elapsed();
    let ok = worst <= 1e-9 && elapsed < Duration::from_secs(1) && counts.iter().all(|&c| c >= 100);
    (ok, format!("{counts:?} twists per mode, max error {worst:.2e}, {:.1} ms", elapsed.as_secs_f64() * 1e3))
}

fn ackermann_icr(geom: &RoverGeometry) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 50 {
        let mut omega: f64 = rng.gen_range(-0.5..0.5);
        if omega.abs() < 0.05 {
            omega = 0.05f64.copysign(omega);
        }
        let twist = BodyTwist::new(rng.gen_range(-0.8..0.8), 0.0, omega);
        let Ok(sp) = inverse_kinematics(twist, LocomotionMode::AckermannTurn, geom) else { continue };
        let Icr::At(c) = Icr::of(&twist) else { unreachable!() };
        for (p, w) in geom.wheel_positions.iter().zip(sp.iter()) {
            // Distance from the ICR to the wheel axis (the normal through p).
            let along = (c.x - p.x) * w.steer_angle.cos() + (c.y - p.y) * w.steer_angle.sin();
            worst = worst.max(along.abs());
        }
        n += 1;
    }
    (worst <= 1e-6, format!("{n} commands, max axis distance {worst:.2e} m"))
}

fn point_turn(geom: &RoverGeometry) -> (bool, String) {
    // Tangent-angle oracle for the front-left wheel at (+a, +b):
    // atan2(a, -b) folded by -180 deg.
    let [a, b] = [geom.wheel_positions[FRONT_LEFT].x, geom.wheel_positions[FRONT_LEFT].y];
    let oracle = (a.atan2(-b) - std::f64::consts::PI).to_degrees();
    let fl = mode_entry_angles(LocomotionMode::PointTurn, geom)[FRONT_LEFT].to_degrees();
    let sp = inverse_kinematics(BodyTwist::new(0.0, 0.0, 0.3), LocomotionMode::PointTurn, geom).unwrap();
    let ik_fl = sp[FRONT_LEFT].steer_angle.to_degrees();
    let angle_ok = (fl - oracle).abs() <= 0.01 && (ik_fl - oracle).abs() <= 0.01;

    let mut s = Scenario::flat(40.0, 0.8);
    s.start.mode = LocomotionMode::PointTurn;
    s.log_every = 1;
    s.script = vec![ScriptEntry { t: 0.0, command: RoverCommand::Twist(BodyTwist::new(0.0, 0.0, 0.3)) }];
    let mut world = World::new(s).unwrap();
    let mut turned = 0.0;
    let mut last = world.pose().heading;
    while turned < 2.0 * std::f64::consts::PI && !world.is_finished() {
        world.step();
        let h = world.pose().heading;
        turned += emrs_core::math::normalize_angle(h - last);
        last = h;
    }
    let p = world.pose();
    let drift = p.x.hypot(p.y);
    let ok = angle_ok && turned >= 2.0 * std::f64::consts::PI && drift < 1e-6;
    (
        ok,
        format!(
            "FL steer {fl:.4} deg (IK {ik_fl:.4}, oracle {oracle:.4}); translation over {:.3} rad {drift:.2e} m",
            turned
        ),
    )
}

fn main() {
    acceptance();
}

fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let geom = RoverGeometry::default();
    let mut report = Report { lines: Vec::new() };

    let (ok, d) = kinematics_round_trip(&geom);
    report.record("kinematics round-trip", ok, d);

    let (ok, d) = ackermann_icr(&geom);
    report.record("ackermann icr", ok, d);

    let (ok, d) = point_turn(&geom);
    report.record("point-turn geometry", ok, d);

    // Bundled runs, kept for the determinism and torque checks.
    let runs: Vec<(&str, RunOutput)> =
        BUNDLED.iter().map(|n| (*n, run_cli(&scenario_path(n), &dir.path().join("a").join(n)))).collect();
    let get = |name: &str| &runs.iter().find(|(n, _)| *n == name).unwrap().1;

    {
        let hi = get("slope25");
        let lo = get("slope25_lowmu");
        let ok = hi.code == 0
            && hi.metrics.net_progress >= 5.0
            && hi.metrics.slip_ticks == 0
            && hi.metrics.min_margin > 0.0
            && lo.code == 0
            && lo.metrics.net_progress < 0.1
            && hi.wall < Duration::from_secs(10)
            && lo.wall < Duration::from_secs(10);
        report.record(
            "slope 25 deg",
            ok,
            format!(
                "mu 0.6: {:.3} m, {} slip ticks, min margin {:.3} m, {:.2} s; mu 0.4: {:.3} m, {:.2} s",
                hi.metrics.net_progress,
                hi.metrics.slip_ticks,
                hi.metrics.min_margin,
                hi.wall.as_secs_f64(),
                lo.metrics.net_progress,
                lo.wall.as_secs_f64()
            ),
        );
    }

    {
        let s = Scenario::load(&scenario_path("step30")).unwrap();
        let g = s.geometry().unwrap();
        let travel = SuspensionParams::default().usable_travel();
        let r = g.wheel_radius();
        let check30 = obstacle_traversal_check(r, 0.30, travel, s.mu);
        let check45 = obstacle_traversal_check(r, 0.45, travel, s.mu);
        let run = get("step30");
        let rear_past = run.metrics.final_pose.x + g.wheel_positions[2].x - r > 2.0 + 0.02;
        let ok = check30.traversable
            && !check45.traversable
            && check45.limiting_factor == LimitingFactor::Geometry
            && run.code == 0
            && run.metrics.contact_loss_events == 0
            && rear_past;
        report.record(
            "obstacle 30 cm",
            ok,
            format!(
                "30 cm traversable {} (ratio {:.2}); run final x {:.3} m, contact loss events {}; 45 cm {:?}",
                check30.traversable,
                check30.traction_ratio,
                run.metrics.final_pose.x,
                run.metrics.contact_loss_events,
                check45.limiting_factor
            ),
        );
    }

    {
        let s = Scenario::load(&scenario_path("excavation_drawbar")).unwrap();
        let oracle = s.mu * s.geometry().unwrap().total_mass() * s.gravity;
        let got = get("excavation_drawbar").metrics.max_drawbar_pull;
        let err = (got - oracle).abs() / oracle;
        report.record(
            "excavation drawbar",
            err <= 0.02,
            format!("max drawbar {got:.2} N vs mu*m*g {oracle:.2} N ({:.2}%)", err * 100.0),
        );
    }

    {
        let shifted = get("isru_200kg_slope");
        let unshifted = run_variant(dir.path(), "isru_200kg_slope", |s| {
            s.name = "isru_unshifted".into();
            s.cog_shift = None;
        });
        let s = Scenario::load(&scenario_path("isru_200kg_slope")).unwrap();
        let uphill_y = matches!(s.terrain, emrs_core::terrain::Terrain::Plane { azimuth_deg, .. } if azimuth_deg == 90.0);
        let shift_uphill = s.cog_shift.is_some_and(|c| c[1] > 0.0) && uphill_y;
        let ok = shift_uphill && shifted.metrics.min_margin > unshifted.metrics.min_margin;
        report.record(
            "isru stability",
            ok,
            format!(
                "200 kg, 25 deg lateral: margin {:.4} m shifted vs {:.4} m unshifted",
                shifted.metrics.min_margin, unshifted.metrics.min_margin
            ),
        );
    }

    {
        let walking = get("wheelwalk_escape");
        let driving = run_variant(dir.path(), "wheelwalk_escape", |s| {
            s.name = "wheelwalk_driving".into();
            s.script = vec![ScriptEntry { t: 0.0, command: RoverCommand::Twist(BodyTwist::new(0.2, 0.0, 0.0)) }];
        });
        let ok = driving.metrics.sim_time >= 30.0 - 1e-9
            && walking.metrics.sim_time >= 30.0 - 1e-9
            && driving.metrics.net_progress < 0.05
            && walking.metrics.net_progress > 0.5;
        report.record(
            "wheel-walking escape",
            ok,
            format!(
                "30 s on 25 deg, mu 0.2: driving {:.3} m, walking {:.3} m",
                driving.metrics.net_progress, walking.metrics.net_progress
            ),
        );
    }

    {
        let out = Command::new(env!("CARGO_BIN_EXE_emrs")).arg("scale").output().unwrap();
        let text = String::from_utf8_lossy(&out.stdout);
        let factor: f64 = text
            .lines()
            .find_map(|l| l.strip_prefix("factor "))
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(f64::NAN);
        let devs: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with("stowed ") || l.starts_with("deployed "))
            .filter_map(|l| l.trim_end().strip_suffix('%')?.rsplit(' ').next()?.parse().ok())
            .collect();
        let ok = out.status.success() && (factor - 0.550).abs() <= 0.001 && devs.len() == 2 && devs.iter().all(|d| *d <= 5.0);
        report.record("scaling law", ok, format!("factor {factor:.6}, envelope deviations {devs:?} %"));
    }

    {
        let mut differing = Vec::new();
        for (name, first) in &runs {
            let second = run_cli(&scenario_path(name), &dir.path().join("b").join(name));
            if first.log.is_empty() || first.log != second.log || first.metrics != second.metrics {
                differing.push(*name);
            }
        }
        report.record(
            "determinism",
            differing.is_empty(),
            format!("{} bundled scenarios run twice, differing: {differing:?}", runs.len()),
        );
    }

    {
        let mut logged: f64 = 0.0;
        let mut internal: f64 = 0.0;
        for (_, run) in &runs {
            let log = read_log(std::str::from_utf8(&run.log).unwrap());
            assert_eq!(log.skipped, 0);
            for r in &log.records {
                for w in &r.wheels {
                    logged = logged.max(w.torque.abs());
                }
            }
            internal = internal.max(run.metrics.max_torque);
        }
        report.record(
            "torque ceiling",
            logged <= 80.0 && internal <= 80.0,
            format!("max logged |torque| {logged:.2} N·m, max over all substeps {internal:.2} N·m"),
        );
    }

    let failed: Vec<&str> = report.lines.iter().filter(|l| !l.0).map(|l| l.1.as_str()).collect();
    println!("{} of {} criteria passed", report.lines.len() - failed.len(), report.lines.len());
    assert!(failed.is_empty(), "failed: {failed:?}");
}
