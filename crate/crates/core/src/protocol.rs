//! Newline-delimited JSON wire format between devices and the hub.
//!
//! Every device line is one JSON object terminated by `\n`:
//!
//! ```text
//! {"v":1,"dev":"cot-01","seq":1,"ts":0,"kind":"temp_c","val":22.5}
//! ```
//!
//! The hub answers actuator devices on the same connection with command lines
//! such as `{"v":1,"cmd":"led_on","ts":5}`. An actuator that never reports a
//! reading identifies its connection with a hello line `{"v":1,"hello":"led-01"}`.
//!
//! Unknown object keys are ignored. A bad line produces exactly one error and
//! never ends the stream.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const WIRE_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("invariant violated on `{field}`: {reason}")]
    InvariantViolation { field: &'static str, reason: String },
    #[error("stale sequence {seq} from `{device}` (last accepted {last})")]
    StaleSequence { device: String, seq: u64, last: u64 },
}

impl ProtocolError {
    pub fn invariant(field: &'static str, reason: impl Into<String>) -> Self {
        ProtocolError::InvariantViolation {
            field,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    TempC,
    Sound,
    MotionCot,
    MotionRoom,
    IrStanding,
    MoisturePct,
    RfidRead,
    GpsFix,
    SolarV,
}

impl SensorKind {
    pub const ALL: [SensorKind; 9] = [
        SensorKind::TempC,
        SensorKind::Sound,
        SensorKind::MotionCot,
        SensorKind::MotionRoom,
        SensorKind::IrStanding,
        SensorKind::MoisturePct,
        SensorKind::RfidRead,
        SensorKind::GpsFix,
        SensorKind::SolarV,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::TempC => "temp_c",
            SensorKind::Sound => "sound",
            SensorKind::MotionCot => "motion_cot",
            SensorKind::MotionRoom => "motion_room",
            SensorKind::IrStanding => "ir_standing",
            SensorKind::MoisturePct => "moisture_pct",
            SensorKind::RfidRead => "rfid_read",
            SensorKind::GpsFix => "gps_fix",
            SensorKind::SolarV => "solar_v",
        }
    }

    /// Kinds whose payload is a boolean level.
    pub fn is_boolean(self) -> bool {
        matches!(
            self,
            SensorKind::Sound | SensorKind::MotionCot | SensorKind::MotionRoom | SensorKind::IrStanding
        )
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownKind(s.to_string()))
    }
}

/// A typed sensor payload. The variant determines the wire `kind`.
#[derive(Debug, Clone, PartialEq)]
pub enum Reading {
    TempC(f64),
    Sound(bool),
    MotionCot(bool),
    MotionRoom(bool),
    IrStanding(bool),
    MoisturePct(f64),
    RfidRead { tag: String, reader: String },
    GpsFix { lat: f64, lon: f64 },
    SolarV(f64),
}

impl Reading {
    pub fn kind(&self) -> SensorKind {
        match self {
            Reading::TempC(_) => SensorKind::TempC,
            Reading::Sound(_) => SensorKind::Sound,
            Reading::MotionCot(_) => SensorKind::MotionCot,
            Reading::MotionRoom(_) => SensorKind::MotionRoom,
            Reading::IrStanding(_) => SensorKind::IrStanding,
            Reading::MoisturePct(_) => SensorKind::MoisturePct,
            Reading::RfidRead { .. } => SensorKind::RfidRead,
            Reading::GpsFix { .. } => SensorKind::GpsFix,
            Reading::SolarV(_) => SensorKind::SolarV,
        }
    }

    /// Boolean level for the four edge-detected kinds.
    pub fn level(&self) -> Option<bool> {
        match *self {
            Reading::Sound(b) | Reading::MotionCot(b) | Reading::MotionRoom(b) | Reading::IrStanding(b) => {
                Some(b)
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            Reading::TempC(x) | Reading::SolarV(x) => finite(*x),
            Reading::MoisturePct(x) => {
                finite(*x)?;
                if !(0.0..=100.0).contains(x) {
                    return Err(ProtocolError::invariant("val", format!("moisture {x} outside [0, 100]")));
                }
                Ok(())
            }
            Reading::RfidRead { tag, reader } => {
                if tag.is_empty() || reader.is_empty() {
                    return Err(ProtocolError::invariant("val", "rfid tag and reader must be non-empty"));
                }
                Ok(())
            }
            Reading::GpsFix { lat, lon } => {
                finite(*lat)?;
                finite(*lon)?;
                if !(-90.0..=90.0).contains(lat) {
                    return Err(ProtocolError::invariant("val", format!("latitude {lat} outside [-90, 90]")));
                }
                if !(-180.0..=180.0).contains(lon) {
                    return Err(ProtocolError::invariant("val", format!("longitude {lon} outside [-180, 180]")));
                }
                Ok(())
            }
            Reading::Sound(_) | Reading::MotionCot(_) | Reading::MotionRoom(_) | Reading::IrStanding(_) => Ok(()),
        }
    }

    /// Builds and validates a reading from a kind and its JSON payload.
    pub fn from_json(kind: SensorKind, val: Value) -> Result<Self, ProtocolError> {
        let number = |v: &Value| {
            v.as_f64()
                .ok_or_else(|| ProtocolError::invariant("val", format!("{kind} expects a number, got {v}")))
        };
        let flag = |v: &Value| {
            v.as_bool()
                .ok_or_else(|| ProtocolError::invariant("val", format!("{kind} expects a boolean, got {v}")))
        };
        let reading = match kind {
            SensorKind::TempC => Reading::TempC(number(&val)?),
            SensorKind::SolarV => Reading::SolarV(number(&val)?),
            SensorKind::MoisturePct => Reading::MoisturePct(number(&val)?),
            SensorKind::Sound => Reading::Sound(flag(&val)?),
            SensorKind::MotionCot => Reading::MotionCot(flag(&val)?),
            SensorKind::MotionRoom => Reading::MotionRoom(flag(&val)?),
            SensorKind::IrStanding => Reading::IrStanding(flag(&val)?),
            SensorKind::RfidRead => {
                #[derive(Deserialize)]
                struct Rfid {
                    tag: String,
                    reader: String,
                }
                let r: Rfid = serde_json::from_value(val)
                    .map_err(|e| ProtocolError::invariant("val", format!("rfid_read payload: {e}")))?;
                Reading::RfidRead {
                    tag: r.tag,
                    reader: r.reader,
                }
            }
            SensorKind::GpsFix => {
                #[derive(Deserialize)]
                struct Gps {
                    lat: f64,
                    lon: f64,
                }
                let g: Gps = serde_json::from_value(val)
                    .map_err(|e| ProtocolError::invariant("val", format!("gps_fix payload: {e}")))?;
                Reading::GpsFix { lat: g.lat, lon: g.lon }
            }
        };
        reading.validate()?;
        Ok(reading)
    }
}

fn finite(x: f64) -> Result<(), ProtocolError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ProtocolError::invariant("val", "number must be finite"))
    }
}

/// One timestamped telemetry datum from a device.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    pub device_id: String,
    pub seq: u64,
    pub ts_ms: i64,
    pub reading: Reading,
}

impl SensorEvent {
    pub fn new(device_id: impl Into<String>, seq: u64, ts_ms: i64, reading: Reading) -> Self {
        SensorEvent {
            device_id: device_id.into(),
            seq,
            ts_ms,
            reading,
        }
    }

    pub fn kind(&self) -> SensorKind {
        self.reading.kind()
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireVal<'a> {
    Number(f64),
    Flag(bool),
    Rfid { tag: &'a str, reader: &'a str },
    Gps { lat: f64, lon: f64 },
}

#[derive(Serialize)]
struct WireEvent<'a> {
    v: u64,
    dev: &'a str,
    seq: u64,
    ts: i64,
    kind: SensorKind,
    val: WireVal<'a>,
}

/// Serializes an event as one LF-terminated JSON line.
pub fn encode_event(e: &SensorEvent) -> String {
    let val = match &e.reading {
        Reading::TempC(x) | Reading::MoisturePct(x) | Reading::SolarV(x) => WireVal::Number(*x),
        Reading::Sound(b) | Reading::MotionCot(b) | Reading::MotionRoom(b) | Reading::IrStanding(b) => {
            WireVal::Flag(*b)
        }
        Reading::RfidRead { tag, reader } => WireVal::Rfid { tag, reader },
        Reading::GpsFix { lat, lon } => WireVal::Gps { lat: *lat, lon: *lon },
    };
    let wire = WireEvent {
        v: WIRE_VERSION,
        dev: &e.device_id,
        seq: e.seq,
        ts: e.ts_ms,
        kind: e.kind(),
        val,
    };
    let mut line = serde_json::to_string(&wire).expect("wire event is always serializable");
    line.push('\n');
    line
}

#[derive(Deserialize)]
struct RawEvent {
    v: u64,
    dev: String,
    seq: u64,
    ts: i64,
    kind: String,
    val: Value,
}

fn check_version(v: u64) -> Result<(), ProtocolError> {
    if v != WIRE_VERSION {
        return Err(ProtocolError::invariant("v", format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn decode_event(line: &[u8]) -> Result<SensorEvent, ProtocolError> {
    let raw: RawEvent = serde_json::from_slice(line).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    check_version(raw.v)?;
    if raw.dev.is_empty() {
        return Err(ProtocolError::invariant("dev", "device id must be non-empty"));
    }
    let kind: SensorKind = raw.kind.parse()?;
    let reading = Reading::from_json(kind, raw.val)?;
    Ok(SensorEvent {
        device_id: raw.dev,
        seq: raw.seq,
        ts_ms: raw.ts,
        reading,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Led,
    Camera,
    WhiteNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    LedOn,
    LedOff,
    CameraOn,
    CameraOff,
    WhiteNoiseOn,
    WhiteNoiseOff,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::LedOn,
        CommandKind::LedOff,
        CommandKind::CameraOn,
        CommandKind::CameraOff,
        CommandKind::WhiteNoiseOn,
        CommandKind::WhiteNoiseOff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::LedOn => "led_on",
            CommandKind::LedOff => "led_off",
            CommandKind::CameraOn => "camera_on",
            CommandKind::CameraOff => "camera_off",
            CommandKind::WhiteNoiseOn => "white_noise_on",
            CommandKind::WhiteNoiseOff => "white_noise_off",
        }
    }

    pub fn actuator(self) -> Actuator {
        match self {
            CommandKind::LedOn | CommandKind::LedOff => Actuator::Led,
            CommandKind::CameraOn | CommandKind::CameraOff => Actuator::Camera,
            CommandKind::WhiteNoiseOn | CommandKind::WhiteNoiseOff => Actuator::WhiteNoise,
        }
    }

    /// Target state of the actuator after this command.
    pub fn switches_on(self) -> bool {
        matches!(self, CommandKind::LedOn | CommandKind::CameraOn | CommandKind::WhiteNoiseOn)
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommandKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommandKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub kind: CommandKind,
    pub ts_ms: i64,
}

#[derive(Serialize)]
struct WireCommand {
    v: u64,
    cmd: CommandKind,
    ts: i64,
}

pub fn encode_command(c: &Command) -> String {
    let wire = WireCommand {
        v: WIRE_VERSION,
        cmd: c.kind,
        ts: c.ts_ms,
    };
    let mut line = serde_json::to_string(&wire).expect("wire command is always serializable");
    line.push('\n');
    line
}

pub fn decode_command(line: &[u8]) -> Result<Command, ProtocolError> {
    #[derive(Deserialize)]
    struct RawCommand {
        v: u64,
        cmd: String,
        ts: i64,
    }
    let raw: RawCommand = serde_json::from_slice(line).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    check_version(raw.v)?;
    Ok(Command {
        kind: raw.cmd.parse()?,
        ts_ms: raw.ts,
    })
}

/// Anything a device may send to the hub.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceLine {
    Event(SensorEvent),
    Hello { device_id: String },
}

pub fn encode_hello(device_id: &str) -> String {
    let mut line = serde_json::json!({ "v": WIRE_VERSION, "hello": device_id }).to_string();
    line.push('\n');
    line
}

pub fn decode_device_line(line: &[u8]) -> Result<DeviceLine, ProtocolError> {
    #[derive(Deserialize)]
    struct Probe {
        hello: Option<Value>,
        v: Option<u64>,
    }
    let probe: Probe = serde_json::from_slice(line).map_err(|e| ProtocolError::MalformedJson(e.to_string()))?;
    match probe.hello {
        Some(Value::String(device_id)) if !device_id.is_empty() => {
            check_version(probe.v.ok_or_else(|| ProtocolError::MalformedJson("missing field `v`".into()))?)?;
            Ok(DeviceLine::Hello { device_id })
        }
        Some(_) => Err(ProtocolError::invariant("hello", "hello must carry a non-empty device id")),
        None => decode_event(line).map(DeviceLine::Event),
    }
}

/// Splits a byte stream into device lines. Whitespace-only lines are skipped;
/// every other line yields exactly one item. Iteration stops at EOF or on an
/// I/O error.
pub fn decode_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<DeviceLine, ProtocolError>> {
    let mut reader = reader;
    let mut buf = Vec::new();
    std::iter::from_fn(move || loop {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) | Err(_) => return None,
            Ok(_) => {
                if buf.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                return Some(decode_device_line(&buf));
            }
        }
    })
}

/// Per-device monotonic sequence check.
#[derive(Debug, Clone, Default)]
pub struct SequenceGuard {
    last: HashMap<String, u64>,
}

impl SequenceGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts `event` iff its seq is strictly greater than the last accepted
    /// seq from the same device.
    pub fn admit(&mut self, event: &SensorEvent) -> Result<(), ProtocolError> {
        match self.last.get(&event.device_id) {
            Some(&last) if event.seq <= last => Err(ProtocolError::StaleSequence {
                device: event.device_id.clone(),
                seq: event.seq,
                last,
            }),
            _ => {
                self.last.insert(event.device_id.clone(), event.seq);
                Ok(())
            }
        }
    }

    pub fn last_seq(&self, device_id: &str) -> Option<u64> {
        self.last.get(device_id).copied()
    }
}
