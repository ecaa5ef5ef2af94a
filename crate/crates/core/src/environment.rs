//! Deterministic mattress-wetness and solar-supply models.
//!
//! Both are table-driven. The built-in tables can be replaced by JSON files
//! with the same shape (see [`MattressMaterial`] and [`SolarTable`]).

use std::path::Path;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Moisture above this percentage raises a wet-mattress alert.
pub const WETNESS_THRESHOLD_PCT: f64 = 20.0;

/// Default charge-controller cut-in voltage.
pub const SOLAR_CUT_IN_V: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("negative water volume {0} ml")]
    NegativeVolume(f64),
    #[error("invalid anchor table: {0}")]
    InvalidAnchors(String),
    #[error("invalid solar table: {0}")]
    InvalidSolarTable(String),
    #[error("model file {path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Polyester,
    Cotton,
}

/// Piecewise-linear moisture response of one mattress material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MattressMaterial {
    pub name: Material,
    /// `(water_ml, moisture_pct)` knots.
    pub anchors: Vec<(f64, f64)>,
}

impl MattressMaterial {
    pub fn polyester() -> Self {
        MattressMaterial {
            name: Material::Polyester,
            anchors: vec![(0.0, 0.0), (40.0, 10.0), (50.0, 20.0), (160.0, 100.0)],
        }
    }

    pub fn cotton() -> Self {
        MattressMaterial {
            name: Material::Cotton,
            anchors: vec![(0.0, 0.0), (60.0, 10.0), (70.0, 20.0), (160.0, 100.0)],
        }
    }

    pub fn builtin(material: Material) -> Self {
        match material {
            Material::Polyester => Self::polyester(),
            Material::Cotton => Self::cotton(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidAnchors(format!("{:?}: {m}", self.name)));
        let (Some(first), Some(last)) = (self.anchors.first(), self.anchors.last()) else {
            return bad("no anchors");
        };
        if *first != (0.0, 0.0) {
            return bad("first anchor must be (0, 0)");
        }
        if *last != (160.0, 100.0) {
            return bad("last anchor must be (160, 100)");
        }
        for w in self.anchors.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
                return bad("non-finite anchor");
            }
            if x1 <= x0 {
                return bad("water_ml must be strictly increasing");
            }
            if y1 < y0 {
                return bad("moisture_pct must be non-decreasing");
            }
        }
        Ok(())
    }

    /// Smallest water volume at which the curve reaches `pct`.
    pub fn volume_for(&self, pct: f64) -> Option<f64> {
        self.anchors.windows(2).find_map(|w| {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if pct < y0 || pct > y1 {
                return None;
            }
            if y1 == y0 {
                Some(x0)
            } else {
                Some(x0 + (pct - y0) / (y1 - y0) * (x1 - x0))
            }
        })
    }
}

pub fn moisture_percent(material: &MattressMaterial, water_ml: f64) -> Result<f64, ModelError> {
    if water_ml.is_nan() || water_ml < 0.0 {
        return Err(ModelError::NegativeVolume(water_ml));
    }
    let anchors = &material.anchors;
    let (last_x, last_y) = *anchors.last().expect("validated material has anchors");
    if water_ml >= last_x {
        return Ok(last_y);
    }
    let i = anchors.partition_point(|&(x, _)| x <= water_ml);
    let (x0, y0) = anchors[i - 1];
    let (x1, y1) = anchors[i];
    Ok(y0 + (water_ml - x0) / (x1 - x0) * (y1 - y0))
}

/// Strictly greater than 20 %.
pub fn wetness_alert(pct: f64) -> bool {
    pct > WETNESS_THRESHOLD_PCT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    DirectSun,
    Cloudy,
    HeavyRain,
}

impl Weather {
    pub const ALL: [Weather; 3] = [Weather::DirectSun, Weather::Cloudy, Weather::HeavyRain];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarRow {
    pub hour: f64,
    pub direct_sun: f64,
    pub cloudy: f64,
    pub heavy_rain: f64,
}

impl SolarRow {
    pub fn volts(&self, weather: Weather) -> f64 {
        match weather {
            Weather::DirectSun => self.direct_sun,
            Weather::Cloudy => self.cloudy,
            Weather::HeavyRain => self.heavy_rain,
        }
    }
}

/// Panel output per daylight hour and weather. Outside
/// `(night_end_hour, night_start_hour)` the output is 0 V; between the last
/// listed hour and nightfall (and between dawn and the first listed hour) the
/// voltage ramps linearly to and from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolarTable {
    pub rows: Vec<SolarRow>,
    pub night_start_hour: f64,
    pub night_end_hour: f64,
    #[serde(default = "default_cut_in")]
    pub cut_in_v: f64,
}

fn default_cut_in() -> f64 {
    SOLAR_CUT_IN_V
}

impl Default for SolarTable {
    fn default() -> Self {
        let row = |hour, direct_sun, cloudy| SolarRow {
            hour,
            direct_sun,
            cloudy,
            heavy_rain: 0.0,
        };
        SolarTable {
            rows: vec![
                row(8.0, 17.7, 15.3),
                row(10.0, 19.2, 16.8),
                row(12.0, 19.6, 17.3),
                row(14.0, 19.6, 17.2),
                row(16.0, 19.4, 17.0),
                row(18.0, 18.9, 16.4),
            ],
            night_start_hour: 20.0,
            night_end_hour: 6.0,
            cut_in_v: SOLAR_CUT_IN_V,
        }
    }
}

impl SolarTable {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSolarTable(m));
        if self.rows.is_empty() {
            return bad("no daylight rows".into());
        }
        if !(0.0..24.0).contains(&self.night_end_hour) || !(0.0..24.0).contains(&self.night_start_hour) {
            return bad("night bounds must lie in [0, 24)".into());
        }
        let mut prev = self.night_end_hour;
        for r in &self.rows {
            if !(r.hour > prev && r.hour < self.night_start_hour) {
                return bad(format!("row hour {} out of order or inside the night window", r.hour));
            }
            prev = r.hour;
            for w in Weather::ALL {
                let v = r.volts(w);
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("negative or non-finite voltage at {}h", r.hour));
                }
            }
        }
        if !(self.cut_in_v.is_finite() && self.cut_in_v >= 0.0) {
            return bad("cut-in voltage must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Voltage at `hours` after midnight (fractional, wraps modulo 24).
    pub fn voltage_at_hours(&self, hours: f64, weather: Weather) -> f64 {
        let h = hours.rem_euclid(24.0);
        if h <= self.night_end_hour || h >= self.night_start_hour {
            return 0.0;
        }
        let knots = std::iter::once((self.night_end_hour, 0.0))
            .chain(self.rows.iter().map(|r| (r.hour, r.volts(weather))))
            .chain(std::iter::once((self.night_start_hour, 0.0)));
        let mut prev: Option<(f64, f64)> = None;
        for (x, y) in knots {
            if let Some((x0, y0)) = prev {
                if h <= x {
                    return y0 + (h - x0) / (x - x0) * (y - y0);
                }
            }
            prev = Some((x, y));
        }
        0.0
    }

    pub fn voltage(&self, t: NaiveTime, weather: Weather) -> f64 {
        self.voltage_at_hours(hours_of(t), weather)
    }

    pub fn power_source(&self, t: NaiveTime, weather: Weather) -> PowerSource {
        PowerSource::for_voltage(self.voltage(t, weather), self.cut_in_v)
    }
}

fn hours_of(t: NaiveTime) -> f64 {
    t.num_seconds_from_midnight() as f64 / 3600.0 + t.nanosecond() as f64 / 3.6e12
}

/// Built-in table lookup.
pub fn solar_voltage(t: NaiveTime, weather: Weather) -> f64 {
    SolarTable::default().voltage(t, weather)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSource {
    Solar,
    Mains,
}

impl PowerSource {
    pub fn for_voltage(volts: f64, cut_in_v: f64) -> Self {
        if volts >= cut_in_v {
            PowerSource::Solar
        } else {
            PowerSource::Mains
        }
    }
}

pub fn select_power_source(t: NaiveTime, weather: Weather) -> PowerSource {
    SolarTable::default().power_source(t, weather)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ModelError> {
    let file_err = |reason: String| ModelError::File {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
}

/// Loads a JSON array of materials and validates each.
pub fn load_materials(path: &Path) -> Result<Vec<MattressMaterial>, ModelError> {
    let materials: Vec<MattressMaterial> = read_json(path)?;
    for m in &materials {
        m.validate()?;
    }
    Ok(materials)
}

pub fn load_solar_table(path: &Path) -> Result<SolarTable, ModelError> {
    let table: SolarTable = read_json(path)?;
    table.validate()?;
    Ok(table)
}
