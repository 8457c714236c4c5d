//! Telemetry records and the newline-delimited JSON wire format.
//!
//! A log line and an outbound `state` frame are the same text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::FaultSet;
use crate::manager::{Ack, Command, LocomotionState};
use crate::model::{LocomotionMode, Pose2D, WHEEL_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelTelemetry {
    /// Measured steering angle, rad.
    pub steer_angle: f64,
    /// Measured drive speed, rad/s.
    pub drive_speed: f64,
    /// Applied drive torque, N·m.
    pub torque: f64,
    /// N
    pub normal_force: f64,
    /// Ground force magnitude on the wheel in the contact plane, N.
    pub traction: f64,
    pub slip: bool,
    /// Braked and anchored (wheel-walking stance); friction limit is the planted one.
    pub planted: bool,
    /// Passive suspension deflection, rad.
    pub deflection: f64,
    /// Active suspension offset, rad.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick: u64,
    /// s
    pub time: f64,
    pub pose: Pose2D,
    /// Nose-up positive, rad.
    pub pitch: f64,
    /// Left-side-up positive, rad.
    pub roll: f64,
    pub wheels: [WheelTelemetry; WHEEL_COUNT],
    pub mode: LocomotionMode,
    pub state: LocomotionState,
    pub faults: FaultSet,
    /// Static stability margin, m.
    pub margin: f64,
    pub odometry: Pose2D,
    #[serde(default)]
    pub events: Vec<String>,
}

/// Service to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State(TelemetryRecord),
    Ack(Ack),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("parse: {0}")]
    Malformed(String),
    #[error("unknown type \"{0}\"")]
    UnknownType(String),
    #[error("parse: missing type")]
    MissingType,
}

const COMMAND_TYPES: [&str; 7] =
    ["twist", "set_mode", "deploy", "stow", "wheel_walk_start", "wheel_walk_stop", "estop"];

pub fn encode_command(cmd: &Command) -> String {
    serde_json::to_string(cmd).expect("commands always serialize")
}

pub fn decode_command(line: &str) -> Result<Command, DecodeError> {
    let value: serde_json::Value =
        serde_json::from_str(line.trim()).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let ty = value
        .as_object()
        .ok_or_else(|| DecodeError::Malformed("expected a JSON object".into()))?
        .get("type")
        .ok_or(DecodeError::MissingType)?
        .as_str()
        .ok_or(DecodeError::MissingType)?;
    if !COMMAND_TYPES.contains(&ty) {
        return Err(DecodeError::UnknownType(ty.to_string()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed(e.to_string()))
}

pub fn encode_record(rec: &TelemetryRecord) -> String {
    encode_outbound(&Outbound::State(rec.clone()))
}

pub fn encode_outbound(msg: &Outbound) -> String {
    serde_json::to_string(msg).expect("telemetry is finite and always serializes")
}

pub fn decode_outbound(line: &str) -> Result<Outbound, DecodeError> {
    serde_json::from_str(line.trim()).map_err(|e| DecodeError::Malformed(e.to_string()))
}

pub fn decode_record(line: &str) -> Result<TelemetryRecord, DecodeError> {
    match decode_outbound(line)? {
        Outbound::State(r) => Ok(r),
        Outbound::Ack(_) => Err(DecodeError::Malformed("expected a state frame".into())),
    }
}

/// Records read back from a log, with the number of unreadable lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogContents {
    pub records: Vec<TelemetryRecord>,
    pub skipped: usize,
}

/// Parses a telemetry log. Blank lines are ignored; corrupt lines are
/// counted and skipped.
pub fn read_log(text: &str) -> LogContents {
    let mut out = LogContents::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match decode_record(line) {
            Ok(r) => out.records.push(r),
            Err(_) => out.skipped += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::FaultFlag;
    use crate::manager::{GaitPhase, GaitStage};
    use crate::model::BodyTwist;

    fn sample() -> TelemetryRecord {
        let mut faults = FaultSet::new();
        faults.insert(FaultFlag::StallDetected, 3);
        TelemetryRecord {
            tick: 120,
            time: 1.2000000000000002,
            pose: Pose2D::new(0.1, -2.0 / 3.0, 0.7),
            pitch: 0.01,
            roll: -1e-17,
            wheels: std::array::from_fn(|i| WheelTelemetry {
                steer_angle: 0.1 * i as f64,
                drive_speed: 1.0 / 3.0,
                torque: -79.99999999999999,
                normal_force: 57.3,
                traction: 1e-300,
                slip: i == 2,
                planted: false,
                deflection: 0.035,
                offset: -0.2,
            }),
            mode: LocomotionMode::PointTurn,
            state: LocomotionState::WheelWalking {
                phase: GaitPhase { index: 3, wheel: Some(2), stage: GaitStage::Move },
            },
            faults,
            margin: 0.642,
            odometry: Pose2D::new(0.1, 0.2, -3.0),
            events: vec!["state:driving".into()],
        }
    }

    #[test]
    fn record_round_trip_is_exact() {
        let r = sample();
        let line = encode_record(&r);
        assert!(!line.contains('\n'));
        assert!(line.starts_with(r#"{"type":"state","tick":120"#));
        assert_eq!(decode_record(&line).unwrap(), r);
    }

    #[test]
    fn all_states_round_trip() {
        let mut r = sample();
        for s in [
            LocomotionState::Stowed,
            LocomotionState::Deploying,
            LocomotionState::Idle,
            LocomotionState::Driving { mode: LocomotionMode::CrabTurn },
            LocomotionState::ModeTransition { from: LocomotionMode::CrabTurn, to: LocomotionMode::PointTurn },
            LocomotionState::Stowing,
            LocomotionState::Fault { faults: FaultSet::new() },
        ] {
            r.state = s;
            assert_eq!(decode_record(&encode_record(&r)).unwrap(), r);
        }
    }

    #[test]
    fn estop_encoding() {
        assert_eq!(encode_command(&Command::EStop), r#"{"type":"estop"}"#);
    }

    #[test]
    fn command_round_trip() {
        let cmds = [
            Command::Twist(BodyTwist::new(0.1, -0.30000000000000004, 1e-9)),
            Command::SetMode { mode: LocomotionMode::AckermannTurn },
            Command::Deploy,
            Command::Stow,
            Command::WheelWalkStart,
            Command::WheelWalkStop,
            Command::EStop,
        ];
        for c in cmds {
            assert_eq!(decode_command(&encode_command(&c)).unwrap(), c);
        }
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_command(r#"{"type":"twist"}"#), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode_command("{not json"), Err(DecodeError::Malformed(_))));
        assert_eq!(
            decode_command(r#"{"type":"paddle"}"#),
            Err(DecodeError::UnknownType("paddle".into()))
        );
        assert_eq!(decode_command(r#"{"vx":1}"#), Err(DecodeError::MissingType));
        assert!(decode_command("[1,2]").is_err());
        assert!(decode_command(r#"{"type":"estop","note":"x"}"#).is_ok());
    }

    #[test]
    fn ack_encoding() {
        let line = encode_outbound(&Outbound::Ack(Ack::reject("parse")));
        assert_eq!(line, r#"{"type":"ack","accepted":false,"reason":"parse"}"#);
    }

    #[test]
    fn log_skips_truncated_tail() {
        let full = encode_record(&sample());
        let text = format!("{full}\n\n{full}\n{}", &full[..full.len() / 2]);
        let log = read_log(&text);
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.skipped, 1);
        assert_eq!(read_log(""), LogContents::default());
    }
}
