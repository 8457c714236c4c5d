use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use emrs_core::manager::{Ack, LocomotionState};
use emrs_core::model::{breadboard_scale, full_size_from_breadboard, RoverGeometry, DEFAULT_SCALE_RATIO};
use emrs_core::sim::{run_scenario, Decimator, Metrics, Scenario, TerminalEvent, World};
use emrs_core::suspension::{stow_envelope, Envelope};
use emrs_core::telemetry::{encode_record, read_log, TelemetryRecord};
use emrs_service::{decode_reason, Service, ServiceConfig, DEFAULT_TCP_PORT, DEFAULT_WS_PORT};

/// Reference envelopes of the built rover (L, W, H), m.
const REFERENCE_STOWED: [f64; 3] = [1.879, 1.5, 0.7];
const REFERENCE_DEPLOYED: [f64; 3] = [2.366, 1.525, 1.0];

#[derive(Parser)]
#[command(name = "emrs", version, about = "Rover locomotion simulator, teleop server and scaling calculator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless and write telemetry and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run a scenario live, streaming telemetry and accepting teleop commands.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, env = "EMRS_PORT", default_value_t = DEFAULT_TCP_PORT)]
        port: u16,
        #[arg(long, env = "EMRS_WS_PORT", default_value_t = DEFAULT_WS_PORT)]
        ws_port: u16,
        /// Telemetry frames per second.
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..=100))]
        rate: u32,
        /// Simulated seconds per wall second; 0 runs as fast as possible with
        /// clients read-only.
        #[arg(long, default_value_t = 1.0)]
        realtime: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Re-broadcast a telemetry log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Playback speed; 0 sends every frame immediately.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, env = "EMRS_PORT", default_value_t = DEFAULT_TCP_PORT)]
        port: u16,
        #[arg(long, env = "EMRS_WS_PORT", default_value_t = DEFAULT_WS_PORT)]
        ws_port: u16,
        /// Hold playback until a client connects.
        #[arg(long)]
        wait_for_client: bool,
    },
    /// Print full-size against breadboard dimensions.
    Scale {
        /// Density ratio; lengths scale by its cube root.
        #[arg(long, default_value_t = DEFAULT_SCALE_RATIO, value_parser = parse_ratio)]
        ratio: f64,
    },
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| format!("{e}"))?;
            let d: f64 = d.trim().parse().map_err(|e| format!("{e}"))?;
            n / d
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("ratio must be in (0, 1], got {s}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Cmd::Run { scenario, out, seed_override } => cmd_run(&scenario, &out, seed_override),
        Cmd::Serve { scenario, port, ws_port, rate, realtime, out, seed_override } => {
            let cfg = ServiceConfig { tcp_port: port, ws_port, ..Default::default() };
            cmd_serve(&scenario, &out, seed_override, cfg, rate, realtime)
        }
        Cmd::Replay { log, speed, port, ws_port, wait_for_client } => {
            let cfg = ServiceConfig { tcp_port: port, ws_port, ..Default::default() };
            cmd_replay(&log, speed, cfg, wait_for_client).map(|_| None)
        }
        Cmd::Scale { ratio } => cmd_scale(ratio).map(|_| None),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(t)) => {
            log::warn!("terminal event: {t:?}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("scenario {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn write_outputs(out: &Path, log: &[TelemetryRecord], metrics: &Metrics) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("telemetry.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&path).with_context(|| path.display().to_string())?);
    for r in log {
        writeln!(f, "{}", encode_record(r))?;
    }
    f.flush()?;
    fs::write(out.join("metrics.json"), metrics.to_json() + "\n")?;
    fs::write(out.join("metrics.csv"), metrics.to_csv())?;
    Ok(())
}

fn summary(m: &Metrics) {
    println!(
        "{}: {:.2} s, distance {:.3} m, net progress {:.3} m, slip ticks {}, min margin {:.3} m, max torque {:.2} N·m, drawbar {:.1} N",
        m.scenario, m.sim_time, m.distance, m.net_progress, m.slip_ticks, m.min_margin, m.max_torque, m.max_drawbar_pull
    );
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>) -> Result<Option<TerminalEvent>> {
    let scenario = load_scenario(path, seed)?;
    let (log, metrics) = run_scenario(scenario)?;
    write_outputs(out, &log, &metrics)?;
    summary(&metrics);
    Ok(metrics.terminal)
}

fn cmd_serve(
    path: &Path,
    out: &Path,
    seed: Option<u64>,
    cfg: ServiceConfig,
    rate: u32,
    realtime: f64,
) -> Result<Option<TerminalEvent>> {
    if !(realtime >= 0.0) || !realtime.is_finite() {
        bail!("realtime factor must be >= 0, got {realtime}");
    }
    let scenario = load_scenario(path, seed)?;
    let dt = scenario.dt;
    let mut log_keep = Decimator::new(scenario.log_every as u64);
    let mut frame_keep = Decimator::new(((1.0 / rate as f64) / dt).round().max(1.0) as u64);
    let mut world = World::new(scenario)?;
    let service = Service::start(&cfg).context("starting telemetry service")?;
    log::info!("serving on tcp {} and ws {}", service.tcp_addr(), service.ws_addr());

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).context("installing signal handler")?;

    let read_only = realtime == 0.0;
    let started = Instant::now();
    let mut log = Vec::new();
    let mut terminal = None;
    while !stop.load(Ordering::SeqCst) {
        if read_only && world.is_finished() {
            break;
        }
        for pending in service.poll_commands() {
            let ack = match pending.command {
                Err(ref e) => Ack::reject(decode_reason(e)),
                Ok(_) if read_only => Ack::reject("read-only"),
                Ok(cmd) => world.command(cmd),
            };
            pending.reply(ack);
        }
        let outcome = world.step();
        let tick = outcome.record.tick;
        if let Some(frame) = frame_keep.offer(&outcome.record) {
            service.broadcast(&encode_record(&frame));
        }
        if let Some(r) = log_keep.offer(&outcome.record) {
            log.push(r);
        }
        match outcome.terminal {
            Some(TerminalEvent::TipOver) => {
                terminal = outcome.terminal;
                break;
            }
            // Live operators can clear a fault with an emergency stop.
            Some(TerminalEvent::Fault) if read_only => {
                terminal = outcome.terminal;
                break;
            }
            _ => {}
        }
        if !read_only {
            let due = started + Duration::from_secs_f64(tick as f64 * dt / realtime);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }
    if terminal.is_none() && matches!(world.state(), LocomotionState::Fault { .. }) {
        terminal = Some(TerminalEvent::Fault);
    }
    service.shutdown();
    let metrics = Metrics::from_world(&world, terminal);
    write_outputs(out, &log, &metrics)?;
    summary(&metrics);
    Ok(terminal)
}

fn cmd_replay(path: &Path, speed: f64, cfg: ServiceConfig, wait_for_client: bool) -> Result<()> {
    if !(speed >= 0.0) || !speed.is_finite() {
        bail!("speed must be >= 0, got {speed}");
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let contents = read_log(&text);
    if contents.skipped > 0 {
        log::warn!("skipped {} corrupt line(s)", contents.skipped);
    }
    if contents.records.is_empty() {
        println!("replayed 0 frames, skipped {}", contents.skipped);
        return Ok(());
    }
    let service = Service::start(&cfg).context("starting telemetry service")?;
    log::info!("replaying on tcp {} and ws {}", service.tcp_addr(), service.ws_addr());
    if wait_for_client {
        while service.client_count() == 0 {
            std::thread::sleep(Duration::from_millis(20));
        }
    }
    let started = Instant::now();
    let t0 = contents.records[0].time;
    for r in &contents.records {
        if speed > 0.0 {
            let due = started + Duration::from_secs_f64(((r.time - t0) / speed).max(0.0));
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        service.broadcast(&encode_record(r));
    }
    // Let writers drain before the sockets close.
    std::thread::sleep(Duration::from_millis(200));
    service.shutdown();
    println!("replayed {} frames, skipped {}", contents.records.len(), contents.skipped);
    Ok(())
}

fn fmt_dims(d: &[f64; 3]) -> String {
    format!("{:.3} x {:.3} x {:.3}", d[0], d[1], d[2])
}

fn dims(e: &Envelope) -> [f64; 3] {
    [e.length, e.width, e.height]
}

fn cmd_scale(ratio: f64) -> Result<()> {
    let k = breadboard_scale(1.0, ratio)?;
    let geom = RoverGeometry::default();
    let s = |v: f64| breadboard_scale(v, ratio);
    println!("ratio {ratio:.6}");
    println!("factor {k:.6}");
    println!();
    println!("{:<24} {:>24} {:>24}", "item", "full size [m]", "breadboard [m]");
    for m in &geom.chassis_modules {
        let full = [m.length, m.width, m.height];
        let scaled = [s(m.length)?, s(m.width)?, s(m.height)?];
        let kind = serde_json::to_value(m.name)?;
        let name = format!("{} bay", kind.as_str().unwrap_or_default());
        println!("{name:<24} {:>24} {:>24}", fmt_dims(&full), fmt_dims(&scaled));
    }
    for (name, v) in [
        ("wheelbase", geom.wheelbase()),
        ("track", geom.track()),
        ("wheel diameter", geom.wheel.diameter),
        ("ground clearance", geom.ground_clearance),
    ] {
        println!("{name:<24} {v:>24.3} {:>24.3}", s(v)?);
    }
    for (name, stowed) in [("stowed envelope", true), ("deployed envelope", false)] {
        let e = dims(&stow_envelope(&geom, stowed));
        let scaled = [s(e[0])?, s(e[1])?, s(e[2])?];
        println!("{name:<24} {:>24} {:>24}", fmt_dims(&e), fmt_dims(&scaled));
    }

    // The modelled geometry is the built rover; its lunar counterpart is
    // that size divided by the factor, and scaling it back must land on the
    // measured envelopes.
    println!();
    println!("{:<24} {:>24} {:>24} {:>24} {:>10}", "envelope", "lunar [m]", "scaled [m]", "reference [m]", "max dev");
    for (name, stowed, reference) in
        [("stowed", true, REFERENCE_STOWED), ("deployed", false, REFERENCE_DEPLOYED)]
    {
        let model = dims(&stow_envelope(&geom, stowed));
        let lunar = [
            full_size_from_breadboard(model[0], ratio)?,
            full_size_from_breadboard(model[1], ratio)?,
            full_size_from_breadboard(model[2], ratio)?,
        ];
        let scaled = [s(lunar[0])?, s(lunar[1])?, s(lunar[2])?];
        let dev = (0..3).map(|i| (scaled[i] - reference[i]).abs() / reference[i]).fold(0.0, f64::max);
        println!(
            "{name:<24} {:>24} {:>24} {:>24} {:>9.2}%",
            fmt_dims(&lunar),
            fmt_dims(&scaled),
            fmt_dims(&reference),
            dev * 100.0
        );
    }
    Ok(())
}
