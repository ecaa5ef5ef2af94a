//! Hub configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cradlewatch_core::calibration::CalibrationProfile;
use cradlewatch_core::environment::{self, SolarTable, SOLAR_CUT_IN_V};
use cradlewatch_core::protocol::{CommandKind, SensorKind};
use cradlewatch_core::rules::{DeviceBinding, RulesConfig, DEFAULT_DEBOUNCE_MS};
use cradlewatch_core::tracking::{RfidReaderConfig, TrackingConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STREAM_BACKLOG: usize = 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("duplicate device id `{0}`")]
    DuplicateDevice(String),
    #[error("duplicate reader id `{0}`")]
    DuplicateReader(String),
    #[error("device `{0}`: {1}")]
    InvalidDevice(String, String),
    #[error(transparent)]
    Model(#[from] environment::ModelError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    Sensor,
    Actuator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub id: String,
    pub role: DeviceRole,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinds: Vec<SensorKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<CommandKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listen {
    pub device: SocketAddr,
    pub http: SocketAddr,
}

impl Default for Listen {
    fn default() -> Self {
        Listen {
            device: ([127, 0, 0, 1], 7878).into(),
            http: ([127, 0, 0, 1], 7879).into(),
        }
    }
}

fn default_debounce() -> i64 {
    DEFAULT_DEBOUNCE_MS
}

fn default_backlog() -> usize {
    DEFAULT_STREAM_BACKLOG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubConfig {
    #[serde(default)]
    pub listen: Listen,
    pub devices: Vec<DeviceEntry>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub readers: Vec<RfidReaderConfig>,
    #[serde(default)]
    pub calibration: Vec<CalibrationProfile>,
    #[serde(default)]
    pub moisture_anchors: Option<PathBuf>,
    #[serde(default)]
    pub solar_table: Option<PathBuf>,
    #[serde(default = "default_debounce")]
    pub debounce_ms: i64,
    pub log_path: PathBuf,
    #[serde(default = "default_backlog")]
    pub stream_backlog: usize,
}

impl HubConfig {
    /// Parses a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: HubConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.log_path);
        cfg.moisture_anchors.as_mut().map(resolve);
        cfg.solar_table.as_mut().map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: HubConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.rules_config().map(|_| ())
    }

    fn solar(&self) -> Result<Option<SolarTable>, ConfigError> {
        Ok(match &self.solar_table {
            Some(p) => Some(environment::load_solar_table(p)?),
            None => None,
        })
    }

    /// Builds and validates the rules-engine view of this config, loading any
    /// referenced model files.
    pub fn rules_config(&self) -> Result<RulesConfig, ConfigError> {
        let mut devices = BTreeMap::new();
        for d in &self.devices {
            if d.id.is_empty() {
                return Err(ConfigError::InvalidDevice(d.id.clone(), "empty id".into()));
            }
            let binding = match d.role {
                DeviceRole::Sensor if d.kinds.is_empty() || !d.commands.is_empty() => {
                    return Err(ConfigError::InvalidDevice(
                        d.id.clone(),
                        "sensors need `kinds` and no `commands`".into(),
                    ))
                }
                DeviceRole::Actuator if d.commands.is_empty() || !d.kinds.is_empty() => {
                    return Err(ConfigError::InvalidDevice(
                        d.id.clone(),
                        "actuators need `commands` and no `kinds`".into(),
                    ))
                }
                DeviceRole::Sensor => DeviceBinding::Sensor {
                    kinds: d.kinds.iter().copied().collect(),
                },
                DeviceRole::Actuator => DeviceBinding::Actuator {
                    commands: d.commands.iter().copied().collect(),
                },
            };
            if devices.insert(d.id.clone(), binding).is_some() {
                return Err(ConfigError::DuplicateDevice(d.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.readers {
            if !seen.insert(&r.reader_id) {
                return Err(ConfigError::DuplicateReader(r.reader_id.clone()));
            }
        }
        let mut calibration = BTreeMap::new();
        for p in &self.calibration {
            if calibration.insert(p.device_id.clone(), p.clone()).is_some() {
                return Err(ConfigError::Invalid(format!("two calibration profiles for `{}`", p.device_id)));
            }
        }
        if self.stream_backlog == 0 {
            return Err(ConfigError::Invalid("stream_backlog must be positive".into()));
        }
        if let Some(p) = &self.moisture_anchors {
            environment::load_materials(p)?;
        }
        let solar_cut_in_v = self.solar()?.map_or(SOLAR_CUT_IN_V, |t| t.cut_in_v);
        let rules = RulesConfig {
            devices,
            tracking: TrackingConfig::new(self.readers.iter().cloned(), self.tags.iter().cloned()),
            calibration,
            debounce_ms: self.debounce_ms,
            solar_cut_in_v,
        };
        rules.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(rules)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "devices": [
            {"id": "mic", "role": "sensor", "kinds": ["sound"]},
            {"id": "led", "role": "actuator", "commands": ["led_on", "led_off"]}
        ],
        "log_path": "hub.log"
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = HubConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.debounce_ms, 60_000);
        assert_eq!(cfg.stream_backlog, 1024);
        assert_eq!(cfg.listen, Listen::default());
        let rules = cfg.rules_config().unwrap();
        assert_eq!(rules.actuator_for(CommandKind::LedOff), Some("led"));
    }

    #[test]
    fn duplicate_device_refused() {
        let text = MINIMAL.replace("\"id\": \"led\"", "\"id\": \"mic\"");
        assert!(matches!(HubConfig::from_json(&text), Err(ConfigError::DuplicateDevice(id)) if id == "mic"));
    }

    #[test]
    fn role_shape_checked() {
        let text = MINIMAL.replace(r#""kinds": ["sound"]"#, r#""commands": ["led_on"]"#);
        assert!(matches!(HubConfig::from_json(&text), Err(ConfigError::InvalidDevice(..))));
    }

    #[test]
    fn command_bound_twice_refused() {
        let text = MINIMAL.replace(
            r#"{"id": "led", "role": "actuator", "commands": ["led_on", "led_off"]}"#,
            r#"{"id": "led", "role": "actuator", "commands": ["led_on"]},
               {"id": "led2", "role": "actuator", "commands": ["led_on"]}"#,
        );
        assert!(matches!(HubConfig::from_json(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_refused() {
        let text = MINIMAL.replace("\"log_path\"", "\"colour\": 1, \"log_path\"");
        assert!(matches!(HubConfig::from_json(&text), Err(ConfigError::Syntax(_))));
    }
}
