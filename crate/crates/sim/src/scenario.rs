//! Scenario files and their expansion into wire events.
//!
//! A scenario is JSON with `"v": 1`. Timeline items either carry one reading
//! (`device`, `kind`, `value`) or a `directive` that expands into readings
//! through the environment models. Expansion depends only on the scenario,
//! so the same file always produces the same event sequence.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, Timelike};
use cradlewatch_core::environment::{self, Material, MattressMaterial, Weather};
use cradlewatch_core::protocol::{Reading, SensorEvent, SensorKind};
use cradlewatch_core::tracking::{rfid_detect, Posture};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::baby::{gen_baby, BabyParams, EpisodeKind};

pub const SCENARIO_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("scenario schema: {0}")]
    Schema(String),
}

fn schema(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDevice {
    pub id: String,
    pub kinds: Vec<SensorKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSpan {
    /// Hour of day the span starts, inclusive.
    pub from: f64,
    /// Hour of day the span ends, exclusive.
    pub to: f64,
    pub weather: Weather,
}

fn default_episode_ms() -> u64 {
    20_000
}

fn default_motion_kind() -> SensorKind {
    SensorKind::MotionCot
}

fn default_hour_ms() -> u64 {
    3_600_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case", deny_unknown_fields)]
pub enum Directive {
    /// Sound goes high for `duration_ms`, then low.
    BabyCries {
        device: String,
        #[serde(default = "default_episode_ms")]
        duration_ms: u64,
    },
    /// A motion kind goes high for `duration_ms`, then low.
    BabyMoves {
        device: String,
        #[serde(default = "default_motion_kind")]
        kind: SensorKind,
        #[serde(default = "default_episode_ms")]
        duration_ms: u64,
    },
    /// One moisture reading for `water_ml` spilled on `material`.
    WetsMattress {
        device: String,
        material: Material,
        water_ml: f64,
    },
    /// An RFID read, emitted only if the reader would detect the tag.
    CrawlsPastReader {
        device: String,
        reader: String,
        tag: String,
        posture: Posture,
        distance_cm: f64,
    },
    /// GPS fixes `every_ms` apart, one per `[lat, lon]` point.
    GpsTrack {
        device: String,
        points: Vec<[f64; 2]>,
        #[serde(default)]
        every_ms: u64,
    },
    /// Solar panel readings every `every_ms` over `duration_ms`, using the
    /// weather of the span containing each reading's UTC hour.
    WeatherProfile {
        device: String,
        spans: Vec<WeatherSpan>,
        #[serde(default = "default_hour_ms")]
        every_ms: u64,
        duration_ms: u64,
    },
    /// Random cry and movement episodes drawn from the scenario seed.
    BabyBehavior {
        cry_device: String,
        motion_device: String,
        duration_ms: u64,
        #[serde(default)]
        params: Option<BabyParams>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReading {
    device: String,
    kind: SensorKind,
    value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Reading { device: String, reading: Reading },
    Directive(Directive),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "Value")]
pub struct TimelineItem {
    pub at_ms: u64,
    pub action: Action,
}

impl TryFrom<Value> for TimelineItem {
    type Error = String;

    fn try_from(v: Value) -> Result<Self, String> {
        let Value::Object(mut obj) = v else {
            return Err("timeline items must be objects".into());
        };
        let at_ms = obj
            .remove("at_ms")
            .and_then(|x| x.as_u64())
            .ok_or("timeline item needs a non-negative integer `at_ms`")?;
        let action = if obj.contains_key("directive") {
            Action::Directive(serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?)
        } else {
            let raw: RawReading = serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
            let reading = Reading::from_json(raw.kind, raw.value).map_err(|e| e.to_string())?;
            Action::Reading {
                device: raw.device,
                reading,
            }
        };
        Ok(TimelineItem { at_ms, action })
    }
}

fn default_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub v: u64,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Virtual epoch ms that `at_ms` offsets are added to.
    pub start_ts: i64,
    pub devices: Vec<SimDevice>,
    pub timeline: Vec<TimelineItem>,
}

/// One event as scheduled: its virtual offset and the wire event.
#[derive(Debug, Clone, PartialEq)]
pub struct Planned {
    pub at_ms: u64,
    pub event: SensorEvent,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    fn device_kinds(&self) -> Result<BTreeMap<&str, BTreeSet<SensorKind>>, ScenarioError> {
        let mut out = BTreeMap::new();
        for d in &self.devices {
            if out.insert(d.id.as_str(), d.kinds.iter().copied().collect()).is_some() {
                return Err(schema(format!("device `{}` listed twice", d.id)));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.v != SCENARIO_VERSION {
            return Err(schema(format!("unsupported scenario version {}", self.v)));
        }
        if !(self.speed > 0.0) {
            return Err(schema(format!("speed must be positive, got {}", self.speed)));
        }
        if let Some(w) = self.timeline.windows(2).find(|w| w[1].at_ms < w[0].at_ms) {
            return Err(schema(format!("at_ms goes backwards: {} after {}", w[1].at_ms, w[0].at_ms)));
        }
        // Expanding checks every directive parameter and device reference.
        self.plan().map(|_| ())
    }

    /// Expands the timeline into wire events ordered by virtual time. Items
    /// at the same time keep file order; sequence numbers count per device
    /// from 1.
    pub fn plan(&self) -> Result<Vec<Planned>, ScenarioError> {
        let kinds = self.device_kinds()?;
        let mut raw: Vec<(u64, String, Reading)> = Vec::new();
        for item in &self.timeline {
            expand(self, item, &mut raw)?;
        }
        for (_, device, reading) in &raw {
            match kinds.get(device.as_str()) {
                None => return Err(schema(format!("device `{device}` is not in the scenario's device set"))),
                Some(k) if !k.contains(&reading.kind()) => {
                    return Err(schema(format!("device `{device}` does not report {}", reading.kind())))
                }
                _ => {}
            }
            reading.validate().map_err(|e| schema(e.to_string()))?;
        }
        raw.sort_by_key(|(at, _, _)| *at);
        let mut seqs: BTreeMap<String, u64> = BTreeMap::new();
        Ok(raw
            .into_iter()
            .map(|(at_ms, device, reading)| {
                let seq = seqs.entry(device.clone()).or_insert(0);
                *seq += 1;
                let ts = self.start_ts + at_ms as i64;
                Planned {
                    at_ms,
                    event: SensorEvent::new(device, *seq, ts, reading),
                }
            })
            .collect())
    }
}

fn expand(s: &Scenario, item: &TimelineItem, out: &mut Vec<(u64, String, Reading)>) -> Result<(), ScenarioError> {
    let at = item.at_ms;
    let d = match &item.action {
        Action::Reading { device, reading } => {
            out.push((at, device.clone(), reading.clone()));
            return Ok(());
        }
        Action::Directive(d) => d,
    };
    match d {
        Directive::BabyCries { device, duration_ms } => {
            out.push((at, device.clone(), Reading::Sound(true)));
            out.push((at + duration_ms, device.clone(), Reading::Sound(false)));
        }
        Directive::BabyMoves {
            device,
            kind,
            duration_ms,
        } => {
            let level = |b| match kind {
                SensorKind::MotionCot => Ok(Reading::MotionCot(b)),
                SensorKind::MotionRoom => Ok(Reading::MotionRoom(b)),
                SensorKind::IrStanding => Ok(Reading::IrStanding(b)),
                other => Err(schema(format!("baby_moves cannot drive {other}"))),
            };
            out.push((at, device.clone(), level(true)?));
            out.push((at + duration_ms, device.clone(), level(false)?));
        }
        Directive::WetsMattress {
            device,
            material,
            water_ml,
        } => {
            let pct = environment::moisture_percent(&MattressMaterial::builtin(*material), *water_ml)
                .map_err(|e| schema(e.to_string()))?;
            out.push((at, device.clone(), Reading::MoisturePct(pct)));
        }
        Directive::CrawlsPastReader {
            device,
            reader,
            tag,
            posture,
            distance_cm,
        } => {
            if rfid_detect(*posture, *distance_cm).map_err(|e| schema(e.to_string()))? {
                let reading = Reading::RfidRead {
                    tag: tag.clone(),
                    reader: reader.clone(),
                };
                out.push((at, device.clone(), reading));
            }
        }
        Directive::GpsTrack {
            device,
            points,
            every_ms,
        } => {
            for (i, [lat, lon]) in points.iter().enumerate() {
                let reading = Reading::GpsFix { lat: *lat, lon: *lon };
                out.push((at + i as u64 * every_ms, device.clone(), reading));
            }
        }
        Directive::WeatherProfile {
            device,
            spans,
            every_ms,
            duration_ms,
        } => {
            if *every_ms == 0 {
                return Err(schema("weather_profile needs every_ms > 0"));
            }
            let mut t = 0;
            while t < *duration_ms {
                let ts = s.start_ts + (at + t) as i64;
                let time = DateTime::from_timestamp_millis(ts)
                    .ok_or_else(|| schema(format!("timestamp {ts} out of range")))?
                    .time();
                let hour = time.num_seconds_from_midnight() as f64 / 3600.0;
                let span = spans
                    .iter()
                    .find(|w| w.from <= hour && hour < w.to)
                    .ok_or_else(|| schema(format!("no weather span covers hour {hour}")))?;
                let volts = environment::solar_voltage(time, span.weather);
                out.push((at + t, device.clone(), Reading::SolarV(volts)));
                t += every_ms;
            }
        }
        Directive::BabyBehavior {
            cry_device,
            motion_device,
            duration_ms,
            params,
        } => {
            let params = params.unwrap_or_default();
            params.validate().map_err(schema)?;
            for ep in gen_baby(s.seed, *duration_ms, &params) {
                let (device, on, off) = match ep.kind {
                    EpisodeKind::Cry => (cry_device, Reading::Sound(true), Reading::Sound(false)),
                    EpisodeKind::Move => (motion_device, Reading::MotionCot(true), Reading::MotionCot(false)),
                };
                out.push((at + ep.at_ms, device.clone(), on));
                out.push((at + ep.at_ms + ep.duration_ms, device.clone(), off));
            }
        }
    }
    Ok(())
}
