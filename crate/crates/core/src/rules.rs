//! Alert rules: folds sensor events into [`SurveillanceState`].
//!
//! Per event kind:
//!
//! * `rfid_read` at an exit reader marks the child outside and raises
//!   `rfid_trespass`, echoing the latest stored GPS fix;
//! * a `sound` rising edge bumps the crying counter and raises `crying`;
//! * a `motion_cot` or `ir_standing` rising edge bumps the movement counter
//!   and raises `movement`;
//! * a `motion_room` rising edge raises `motion_room`;
//! * `temp_c` is calibrated, then raises `temp_high` above 24 °C or
//!   `temp_low` below 20 °C;
//! * `moisture_pct` above 20 % raises `wet_mattress`;
//! * `gps_fix` is stored only while the child is outside.
//!
//! Every alert passes a per-type debounce window. Suppression never holds back
//! a state update.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationProfile;
use crate::environment::{self, PowerSource, SOLAR_CUT_IN_V};
use crate::protocol::{Actuator, Command, CommandKind, Reading, SensorEvent, SensorKind};
use crate::tracking::{LocationFix, TrackingConfig, TrackingError, TrackingState, ZoneEvent};

pub const TEMP_HIGH_C: f64 = 24.0;
pub const TEMP_LOW_C: f64 = 20.0;
pub const DEFAULT_DEBOUNCE_MS: i64 = 60_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RulesError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("device `{device}` is not bound to kind `{kind}`")]
    KindNotBound { device: String, kind: SensorKind },
    #[error("no actuator registered for `{0}`")]
    NoActuatorRegistered(CommandKind),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error("invalid rules config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    TempHigh,
    TempLow,
    Crying,
    Movement,
    MotionRoom,
    WetMattress,
    RfidTrespass,
}

impl AlertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertKind::TempHigh => "temp_high",
            AlertKind::TempLow => "temp_low",
            AlertKind::Crying => "crying",
            AlertKind::Movement => "movement",
            AlertKind::MotionRoom => "motion_room",
            AlertKind::WetMattress => "wet_mattress",
            AlertKind::RfidTrespass => "rfid_trespass",
        }
    }
}

impl fmt::Display for AlertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlertDetail {
    Trespass {
        reader: String,
        zone: String,
        tag: String,
        location: Option<LocationFix>,
    },
    Temperature {
        celsius: f64,
        raw_celsius: f64,
    },
    Moisture {
        pct: f64,
    },
    Occurrence {
        device: String,
        count: u64,
    },
    Motion {
        device: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    #[serde(rename = "type")]
    pub kind: AlertKind,
    #[serde(rename = "ts")]
    pub ts_ms: i64,
    pub detail: AlertDetail,
}

/// Side records produced while processing, for the event log.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    CounterArchive(CounterArchive),
    FixAccepted(LocationFix),
    FixRejected(LocationFix),
    ZonePresence(ZoneEvent),
    UnregisteredTag { reader: String, tag: String, ts_ms: i64 },
    Suppressed { kind: AlertKind, ts_ms: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterArchive {
    pub date: NaiveDate,
    pub crying: u64,
    pub movement: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub alerts: Vec<Alert>,
    pub notes: Vec<Note>,
}

/// Command line to deliver to an actuator device.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub device_id: String,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum DeviceBinding {
    Sensor { kinds: BTreeSet<SensorKind> },
    Actuator { commands: BTreeSet<CommandKind> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulesConfig {
    pub devices: BTreeMap<String, DeviceBinding>,
    pub tracking: TrackingConfig,
    /// Temperature calibration by device id; devices without a profile are
    /// read uncorrected.
    pub calibration: BTreeMap<String, CalibrationProfile>,
    pub debounce_ms: i64,
    pub solar_cut_in_v: f64,
}

impl Default for RulesConfig {
    fn default() -> Self {
        RulesConfig {
            devices: BTreeMap::new(),
            tracking: TrackingConfig::default(),
            calibration: BTreeMap::new(),
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            solar_cut_in_v: SOLAR_CUT_IN_V,
        }
    }
}

impl RulesConfig {
    pub fn validate(&self) -> Result<(), RulesError> {
        let bad = |m: String| Err(RulesError::InvalidConfig(m));
        if self.debounce_ms < 0 {
            return bad("debounce window must be non-negative".into());
        }
        let mut bound: BTreeMap<CommandKind, &str> = BTreeMap::new();
        for (id, binding) in &self.devices {
            if let DeviceBinding::Actuator { commands } = binding {
                for &c in commands {
                    if let Some(other) = bound.insert(c, id) {
                        return bad(format!("command `{c}` bound to both `{other}` and `{id}`"));
                    }
                }
            }
        }
        for r in self.tracking.readers.values() {
            r.validate()?;
        }
        for p in self.calibration.values() {
            p.validate().map_err(|e| RulesError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn actuator_for(&self, kind: CommandKind) -> Option<&str> {
        self.devices.iter().find_map(|(id, b)| match b {
            DeviceBinding::Actuator { commands } if commands.contains(&kind) => Some(id.as_str()),
            _ => None,
        })
    }

    pub fn profile_for(&self, device_id: &str) -> Option<&CalibrationProfile> {
        self.calibration.get(device_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub crying: u64,
    pub movement: u64,
    pub date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actuators {
    pub led: bool,
    pub camera: bool,
    pub white_noise: bool,
}

impl Actuators {
    pub fn get(&self, a: Actuator) -> bool {
        match a {
            Actuator::Led => self.led,
            Actuator::Camera => self.camera,
            Actuator::WhiteNoise => self.white_noise,
        }
    }

    fn set(&mut self, a: Actuator, on: bool) {
        match a {
            Actuator::Led => self.led = on,
            Actuator::Camera => self.camera = on,
            Actuator::WhiteNoise => self.white_noise = on,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LastReading {
    pub ts_ms: i64,
    pub reading: Reading,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveillanceState {
    pub last: BTreeMap<SensorKind, LastReading>,
    /// Previous level of each boolean kind, for edge detection.
    pub edge: BTreeMap<SensorKind, bool>,
    pub counters: Counters,
    pub tracking: TrackingState,
    pub actuators: Actuators,
    pub debounce: BTreeMap<AlertKind, i64>,
    pub corrected_temp_c: Option<f64>,
    /// Largest timestamp seen so far.
    pub clock_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YesNo {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
}

impl From<bool> for YesNo {
    fn from(b: bool) -> Self {
        if b {
            YesNo::Yes
        } else {
            YesNo::No
        }
    }
}

/// Immutable dashboard view of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub motion: YesNo,
    pub sound: YesNo,
    pub temp_c: Option<f64>,
    pub moisture_pct: Option<f64>,
    pub solar_v: Option<f64>,
    pub power_source: Option<PowerSource>,
    pub counters: Counters,
    pub actuators: Actuators,
    pub outside_home: bool,
    pub latest_fix: Option<LocationFix>,
}

fn utc_date(ts_ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(ts_ms)
        .map(|t| t.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

impl SurveillanceState {
    pub fn new() -> Self {
        Self::default()
    }

    fn level(&self, kind: SensorKind) -> bool {
        self.edge.get(&kind).copied().unwrap_or(false)
    }

    fn number(&self, kind: SensorKind) -> Option<f64> {
        match self.last.get(&kind)?.reading {
            Reading::TempC(x) | Reading::MoisturePct(x) | Reading::SolarV(x) => Some(x),
            _ => None,
        }
    }

    /// Archives and zeroes the counters when `now_ms` falls on a new UTC day.
    pub fn roll_day(&mut self, now_ms: i64) -> Option<CounterArchive> {
        let today = utc_date(now_ms);
        match self.counters.date {
            None => {
                self.counters.date = Some(today);
                None
            }
            Some(d) if d < today => {
                let archive = CounterArchive {
                    date: d,
                    crying: self.counters.crying,
                    movement: self.counters.movement,
                };
                self.counters = Counters {
                    crying: 0,
                    movement: 0,
                    date: Some(today),
                };
                Some(archive)
            }
            Some(_) => None,
        }
    }

    pub fn snapshot(&self, cut_in_v: f64) -> StateView {
        let solar_v = self.number(SensorKind::SolarV);
        StateView {
            motion: (self.level(SensorKind::MotionCot)
                || self.level(SensorKind::IrStanding)
                || self.level(SensorKind::MotionRoom))
            .into(),
            sound: self.level(SensorKind::Sound).into(),
            temp_c: self.corrected_temp_c,
            moisture_pct: self.number(SensorKind::MoisturePct),
            solar_v,
            power_source: solar_v.map(|v| PowerSource::for_voltage(v, cut_in_v)),
            counters: self.counters.clone(),
            actuators: self.actuators,
            outside_home: self.tracking.outside_home,
            latest_fix: self.tracking.latest_location(),
        }
    }
}

/// The rules engine: configuration plus the state it owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    config: RulesConfig,
    state: SurveillanceState,
}

impl Engine {
    pub fn new(config: RulesConfig) -> Result<Self, RulesError> {
        config.validate()?;
        Ok(Engine {
            config,
            state: SurveillanceState::new(),
        })
    }

    pub fn config(&self) -> &RulesConfig {
        &self.config
    }

    pub fn state(&self) -> &SurveillanceState {
        &self.state
    }

    pub fn snapshot(&self) -> StateView {
        self.state.snapshot(self.config.solar_cut_in_v)
    }

    /// Checks everything that can reject `e` before any state is touched.
    fn admit(&self, e: &SensorEvent) -> Result<(), RulesError> {
        let binding = self
            .config
            .devices
            .get(&e.device_id)
            .ok_or_else(|| RulesError::UnknownDevice(e.device_id.clone()))?;
        let kind = e.kind();
        match binding {
            DeviceBinding::Sensor { kinds } if kinds.contains(&kind) => {}
            _ => {
                return Err(RulesError::KindNotBound {
                    device: e.device_id.clone(),
                    kind,
                })
            }
        }
        if let Reading::RfidRead { reader, .. } = &e.reading {
            self.config.tracking.reader(reader)?;
        }
        Ok(())
    }

    fn advance_clock(&mut self, ts_ms: i64, out: &mut Outcome) {
        self.state.clock_ms = self.state.clock_ms.max(ts_ms);
        if let Some(archive) = self.state.roll_day(self.state.clock_ms) {
            out.notes.push(Note::CounterArchive(archive));
        }
    }

    /// Explicit day roll, for timers that fire without a sensor event.
    pub fn roll_day(&mut self, now_ms: i64) -> Outcome {
        let mut out = Outcome::default();
        self.advance_clock(now_ms, &mut out);
        out
    }

    fn emit(&mut self, alert: Alert, out: &mut Outcome) {
        let window = self.config.debounce_ms;
        match self.state.debounce.get(&alert.kind) {
            Some(&last) if alert.ts_ms - last < window => out.notes.push(Note::Suppressed {
                kind: alert.kind,
                ts_ms: alert.ts_ms,
            }),
            _ => {
                self.state.debounce.insert(alert.kind, alert.ts_ms);
                out.alerts.push(alert);
            }
        }
    }

    /// Returns true on a false-to-true transition of a boolean kind.
    fn rising_edge(&mut self, kind: SensorKind, level: bool) -> bool {
        let prev = self.state.edge.insert(kind, level).unwrap_or(false);
        !prev && level
    }

    pub fn process_event(&mut self, e: &SensorEvent) -> Result<Outcome, RulesError> {
        self.admit(e)?;
        let mut out = Outcome::default();
        self.advance_clock(e.ts_ms, &mut out);
        self.state.last.insert(
            e.kind(),
            LastReading {
                ts_ms: e.ts_ms,
                reading: e.reading.clone(),
            },
        );
        let ts = e.ts_ms;
        let device = || e.device_id.clone();

        match &e.reading {
            Reading::RfidRead { tag, reader } => {
                let state = &mut self.state.tracking;
                match self.config.tracking.on_rfid_read(state, reader, tag, ts)? {
                    None => out.notes.push(Note::UnregisteredTag {
                        reader: reader.clone(),
                        tag: tag.clone(),
                        ts_ms: ts,
                    }),
                    Some(zone) if zone.trespass => {
                        let location = self.state.tracking.latest_location();
                        let alert = Alert {
                            kind: AlertKind::RfidTrespass,
                            ts_ms: ts,
                            detail: AlertDetail::Trespass {
                                reader: zone.reader_id,
                                zone: zone.zone,
                                tag: zone.tag,
                                location,
                            },
                        };
                        self.emit(alert, &mut out);
                    }
                    Some(zone) => out.notes.push(Note::ZonePresence(zone)),
                }
            }
            Reading::Sound(level) => {
                if self.rising_edge(SensorKind::Sound, *level) {
                    self.state.counters.crying += 1;
                    let count = self.state.counters.crying;
                    let detail = AlertDetail::Occurrence { device: device(), count };
                    self.emit(Alert { kind: AlertKind::Crying, ts_ms: ts, detail }, &mut out);
                }
            }
            Reading::MotionCot(level) | Reading::IrStanding(level) => {
                if self.rising_edge(e.kind(), *level) {
                    self.state.counters.movement += 1;
                    let count = self.state.counters.movement;
                    let detail = AlertDetail::Occurrence { device: device(), count };
                    self.emit(Alert { kind: AlertKind::Movement, ts_ms: ts, detail }, &mut out);
                }
            }
            Reading::MotionRoom(level) => {
                if self.rising_edge(SensorKind::MotionRoom, *level) {
                    let detail = AlertDetail::Motion { device: device() };
                    self.emit(Alert { kind: AlertKind::MotionRoom, ts_ms: ts, detail }, &mut out);
                }
            }
            Reading::TempC(raw) => {
                let corrected = self
                    .config
                    .profile_for(&e.device_id)
                    .map_or(*raw, |p| p.apply(*raw));
                self.state.corrected_temp_c = Some(corrected);
                let kind = if corrected > TEMP_HIGH_C {
                    Some(AlertKind::TempHigh)
                } else if corrected < TEMP_LOW_C {
                    Some(AlertKind::TempLow)
                } else {
                    None
                };
                if let Some(kind) = kind {
                    let detail = AlertDetail::Temperature {
                        celsius: corrected,
                        raw_celsius: *raw,
                    };
                    self.emit(Alert { kind, ts_ms: ts, detail }, &mut out);
                }
            }
            Reading::MoisturePct(pct) => {
                if environment::wetness_alert(*pct) {
                    let detail = AlertDetail::Moisture { pct: *pct };
                    self.emit(Alert { kind: AlertKind::WetMattress, ts_ms: ts, detail }, &mut out);
                }
            }
            Reading::GpsFix { lat, lon } => {
                let fix = LocationFix::new(*lat, *lon, ts)?;
                if self.state.tracking.put_location(fix) {
                    out.notes.push(Note::FixAccepted(fix));
                } else {
                    out.notes.push(Note::FixRejected(fix));
                }
            }
            Reading::SolarV(_) => {}
        }
        Ok(out)
    }

    /// Applies a guardian command. Returns the device command to forward, or
    /// `None` when the actuator is already in the requested state.
    pub fn process_command(&mut self, c: &Command) -> Result<Option<Forward>, RulesError> {
        let device_id = self
            .config
            .actuator_for(c.kind)
            .ok_or(RulesError::NoActuatorRegistered(c.kind))?
            .to_string();
        self.state.clock_ms = self.state.clock_ms.max(c.ts_ms);
        let actuator = c.kind.actuator();
        let target = c.kind.switches_on();
        if self.state.actuators.get(actuator) == target {
            return Ok(None);
        }
        self.state.actuators.set(actuator, target);
        Ok(Some(Forward { device_id, command: *c }))
    }

    pub fn reset_outside_home(&mut self) {
        self.state.tracking.reset_outside_home();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::RfidReaderConfig;

    // 2024-03-01T00:00:00Z
    const DAY0: i64 = 1_709_251_200_000;

    fn config() -> RulesConfig {
        let sensor = |kinds: &[SensorKind]| DeviceBinding::Sensor {
            kinds: kinds.iter().copied().collect(),
        };
        let mut devices = BTreeMap::new();
        devices.insert("temp".into(), sensor(&[SensorKind::TempC]));
        devices.insert("mic".into(), sensor(&[SensorKind::Sound]));
        devices.insert(
            "cot".into(),
            sensor(&[SensorKind::MotionCot, SensorKind::IrStanding, SensorKind::MoisturePct]),
        );
        devices.insert("room".into(), sensor(&[SensorKind::MotionRoom]));
        devices.insert("door".into(), sensor(&[SensorKind::RfidRead]));
        devices.insert("gps".into(), sensor(&[SensorKind::GpsFix]));
        devices.insert("solar".into(), sensor(&[SensorKind::SolarV]));
        devices.insert(
            "led-01".into(),
            DeviceBinding::Actuator {
                commands: [CommandKind::LedOn, CommandKind::LedOff].into_iter().collect(),
            },
        );
        devices.insert(
            "speaker".into(),
            DeviceBinding::Actuator {
                commands: [CommandKind::WhiteNoiseOn, CommandKind::WhiteNoiseOff].into_iter().collect(),
            },
        );
        let mut calibration = BTreeMap::new();
        calibration.insert(
            "temp".into(),
            CalibrationProfile {
                device_id: "temp".into(),
                offset_c: 1.383,
                samples: vec![],
            },
        );
        RulesConfig {
            devices,
            tracking: TrackingConfig::new(
                [
                    RfidReaderConfig {
                        reader_id: "door-front".into(),
                        mount_height_cm: 3.0,
                        zone: "front door".into(),
                        is_exit: true,
                    },
                    RfidReaderConfig {
                        reader_id: "hall".into(),
                        mount_height_cm: 3.0,
                        zone: "hall".into(),
                        is_exit: false,
                    },
                ],
                ["baby-tag-1".to_string()],
            ),
            calibration,
            ..Default::default()
        }
    }

    fn engine() -> Engine {
        Engine::new(config()).unwrap()
    }

    fn ev(dev: &str, seq: u64, ts: i64, r: Reading) -> SensorEvent {
        SensorEvent::new(dev, seq, DAY0 + ts, r)
    }

    fn kinds(out: &Outcome) -> Vec<AlertKind> {
        out.alerts.iter().map(|a| a.kind).collect()
    }

    #[test]
    fn calibrated_temperature_alerts() {
        let mut e = engine();
        let out = e.process_event(&ev("temp", 1, 0, Reading::TempC(23.2))).unwrap();
        assert_eq!(kinds(&out), vec![AlertKind::TempHigh]);
        match &out.alerts[0].detail {
            AlertDetail::Temperature { celsius, raw_celsius } => {
                assert!((celsius - 24.583).abs() < 1e-9);
                assert_eq!(*raw_celsius, 23.2);
            }
            d => panic!("{d:?}"),
        }
        let out = e.process_event(&ev("temp", 2, 120_000, Reading::TempC(18.0))).unwrap();
        assert_eq!(kinds(&out), vec![AlertKind::TempLow]);
    }

    #[test]
    fn temperature_boundaries_are_strict() {
        let mut cfg = config();
        cfg.calibration.clear();
        let mut e = Engine::new(cfg).unwrap();
        let mut t = 0;
        let mut probe = |c: f64| {
            t += 120_000;
            kinds(&e.process_event(&ev("temp", t as u64, t, Reading::TempC(c))).unwrap())
        };
        assert!(probe(24.0).is_empty());
        assert_eq!(probe(24.01), vec![AlertKind::TempHigh]);
        assert!(probe(20.0).is_empty());
        assert_eq!(probe(19.99), vec![AlertKind::TempLow]);
    }

    #[test]
    fn crying_counts_edges_not_levels() {
        let mut e = engine();
        let a = e.process_event(&ev("mic", 1, 0, Reading::Sound(true))).unwrap();
        let b = e.process_event(&ev("mic", 2, 1_000, Reading::Sound(true))).unwrap();
        assert_eq!(kinds(&a), vec![AlertKind::Crying]);
        assert!(b.alerts.is_empty());
        assert_eq!(e.state().counters.crying, 1);
        assert_eq!(e.snapshot().sound, YesNo::Yes);
    }

    #[test]
    fn debounce_suppresses_alerts_but_not_counts() {
        let mut e = engine();
        let mut alerts = 0;
        for (i, level) in [true, false, true, false, true].into_iter().enumerate() {
            let out = e.process_event(&ev("mic", i as u64 + 1, i as i64 * 10_000, Reading::Sound(level))).unwrap();
            alerts += out.alerts.len();
        }
        assert_eq!(alerts, 1);
        assert_eq!(e.state().counters.crying, 3);
        let out = e.process_event(&ev("mic", 10, 60_000, Reading::Sound(false))).unwrap();
        assert!(out.alerts.is_empty());
        let out = e.process_event(&ev("mic", 11, 60_000, Reading::Sound(true))).unwrap();
        assert_eq!(kinds(&out), vec![AlertKind::Crying]);
    }

    #[test]
    fn movement_from_either_cot_sensor() {
        let mut e = engine();
        e.process_event(&ev("cot", 1, 0, Reading::MotionCot(true))).unwrap();
        e.process_event(&ev("cot", 2, 70_000, Reading::IrStanding(true))).unwrap();
        assert_eq!(e.state().counters.movement, 2);
        let out = e.process_event(&ev("room", 1, 0, Reading::MotionRoom(true))).unwrap();
        assert_eq!(kinds(&out), vec![AlertKind::MotionRoom]);
        assert_eq!(e.state().counters.movement, 2);
    }

    #[test]
    fn wet_mattress() {
        let mut e = engine();
        let out = e.process_event(&ev("cot", 1, 0, Reading::MoisturePct(25.0))).unwrap();
        assert_eq!(kinds(&out), vec![AlertKind::WetMattress]);
        let out = e.process_event(&ev("cot", 2, 100_000, Reading::MoisturePct(20.0))).unwrap();
        assert!(out.alerts.is_empty());
    }

    #[test]
    fn trespass_echoes_location() {
        let mut e = engine();
        let rfid = |seq, ts| {
            ev(
                "door",
                seq,
                ts,
                Reading::RfidRead {
                    tag: "baby-tag-1".into(),
                    reader: "door-front".into(),
                },
            )
        };
        let gps = ev("gps", 1, 1_000, Reading::GpsFix { lat: 3.04, lon: 101.45 });

        let before = e.process_event(&gps).unwrap();
        assert!(matches!(before.notes[..], [Note::FixRejected(_)]));

        let out = e.process_event(&rfid(1, 2_000)).unwrap();
        assert!(matches!(&out.alerts[0].detail, AlertDetail::Trespass { location: None, .. }));
        assert!(e.snapshot().outside_home);

        let mut gps2 = gps.clone();
        gps2.ts_ms = DAY0 + 3_000;
        let out = e.process_event(&gps2).unwrap();
        assert!(matches!(out.notes[..], [Note::FixAccepted(_)]));

        let out = e.process_event(&rfid(2, 100_000)).unwrap();
        match &out.alerts[0].detail {
            AlertDetail::Trespass { location: Some(fix), .. } => {
                assert_eq!((fix.lat, fix.lon), (3.04, 101.45));
            }
            d => panic!("{d:?}"),
        }
    }

    #[test]
    fn inner_reader_and_unknown_tag() {
        let mut e = engine();
        let read = |reader: &str, tag: &str| {
            ev(
                "door",
                1,
                0,
                Reading::RfidRead {
                    tag: tag.into(),
                    reader: reader.into(),
                },
            )
        };
        let out = e.process_event(&read("hall", "baby-tag-1")).unwrap();
        assert!(out.alerts.is_empty());
        assert!(matches!(out.notes[..], [Note::ZonePresence(_)]));
        let out = e.process_event(&read("door-front", "stranger")).unwrap();
        assert!(matches!(out.notes[..], [Note::UnregisteredTag { .. }]));
        assert!(!e.snapshot().outside_home);

        let before = e.clone();
        let err = e.process_event(&read("attic", "baby-tag-1")).unwrap_err();
        assert_eq!(err, RulesError::Tracking(TrackingError::UnknownReader("attic".into())));
        assert_eq!(e, before);
    }

    #[test]
    fn unknown_device_and_unbound_kind_leave_state_alone() {
        let mut e = engine();
        let before = e.clone();
        assert_eq!(
            e.process_event(&ev("ghost", 1, 0, Reading::Sound(true))),
            Err(RulesError::UnknownDevice("ghost".into()))
        );
        assert!(matches!(
            e.process_event(&ev("mic", 1, 0, Reading::TempC(30.0))),
            Err(RulesError::KindNotBound { .. })
        ));
        assert_eq!(e, before);
    }

    #[test]
    fn commands_are_idempotent() {
        let mut e = engine();
        let on = Command {
            kind: CommandKind::LedOn,
            ts_ms: 5,
        };
        let fwd = e.process_command(&on).unwrap().unwrap();
        assert_eq!(fwd.device_id, "led-01");
        assert!(e.snapshot().actuators.led);
        assert_eq!(e.process_command(&on).unwrap(), None);

        let wn = Command {
            kind: CommandKind::WhiteNoiseOn,
            ts_ms: 6,
        };
        let forwards = (0..2).filter_map(|_| e.process_command(&wn).unwrap()).count();
        assert_eq!(forwards, 1);

        let cam_off = Command {
            kind: CommandKind::CameraOff,
            ts_ms: 7,
        };
        assert_eq!(
            e.process_command(&cam_off),
            Err(RulesError::NoActuatorRegistered(CommandKind::CameraOff))
        );
    }

    #[test]
    fn camera_off_when_off_is_a_noop() {
        let mut cfg = config();
        cfg.devices.insert(
            "cam".into(),
            DeviceBinding::Actuator {
                commands: [CommandKind::CameraOn, CommandKind::CameraOff].into_iter().collect(),
            },
        );
        let mut e = Engine::new(cfg).unwrap();
        let off = Command {
            kind: CommandKind::CameraOff,
            ts_ms: 1,
        };
        assert_eq!(e.process_command(&off).unwrap(), None);
        assert!(!e.snapshot().actuators.camera);
    }

    #[test]
    fn day_roll_archives_counters() {
        let mut e = engine();
        e.process_event(&ev("mic", 1, 0, Reading::Sound(true))).unwrap();
        assert!(e.roll_day(DAY0 + 3_600_000).notes.is_empty());
        assert_eq!(e.state().counters.crying, 1);

        let out = e.roll_day(DAY0 + 86_400_000);
        let archive = CounterArchive {
            date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
            crying: 1,
            movement: 0,
        };
        assert_eq!(out.notes, vec![Note::CounterArchive(archive)]);
        assert_eq!(e.state().counters.crying, 0);
        assert_eq!(e.state().counters.date, NaiveDate::from_ymd_opt(2024, 3, 2));
    }

    #[test]
    fn snapshot_is_detached() {
        let mut e = engine();
        let fresh = e.snapshot();
        assert_eq!(fresh.motion, YesNo::No);
        assert_eq!(fresh.sound, YesNo::No);
        assert_eq!(fresh.counters.crying, 0);
        assert_eq!(fresh.latest_fix, None);
        e.process_event(&ev("mic", 1, 0, Reading::Sound(true))).unwrap();
        assert_eq!(fresh.sound, YesNo::No);
        assert_eq!(e.snapshot().counters.crying, 1);
    }

    #[test]
    fn solar_reading_drives_power_source() {
        let mut e = engine();
        e.process_event(&ev("solar", 1, 0, Reading::SolarV(19.6))).unwrap();
        assert_eq!(e.snapshot().power_source, Some(PowerSource::Solar));
        e.process_event(&ev("solar", 2, 1, Reading::SolarV(3.0))).unwrap();
        assert_eq!(e.snapshot().power_source, Some(PowerSource::Mains));
    }

    #[test]
    fn duplicate_actuator_binding_rejected() {
        let mut cfg = config();
        cfg.devices.insert(
            "led-02".into(),
            DeviceBinding::Actuator {
                commands: [CommandKind::LedOn].into_iter().collect(),
            },
        );
        assert!(matches!(Engine::new(cfg), Err(RulesError::InvalidConfig(_))));
    }

    #[test]
    fn alert_json_shape() {
        let a = Alert {
            kind: AlertKind::WetMattress,
            ts_ms: 7,
            detail: AlertDetail::Moisture { pct: 25.0 },
        };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"type":"wet_mattress","ts":7,"detail":{"pct":25.0}}"#);
        assert_eq!(serde_json::from_str::<Alert>(&json).unwrap(), a);
    }
}
