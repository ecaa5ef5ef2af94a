//! Temperature sensor calibration by constant offset.
//!
//! The relative error between a sensor reading `x` and a reference reading
//! `y` is `|x - y| / y * 100`. A profile corrects raw readings by adding a
//! fixed offset, fitted as the mean residual `reference - sensor`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("reference reading is zero")]
    DivisionByZeroReference,
    #[error("no calibration samples")]
    EmptySampleSet,
    #[error("non-finite value in calibration data")]
    NonFinite,
    #[error("calibration fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub sensor_reading_c: f64,
    pub reference_reading_c: f64,
}

impl CalibrationSample {
    pub fn new(sensor_reading_c: f64, reference_reading_c: f64) -> Result<Self, CalibrationError> {
        if !sensor_reading_c.is_finite() || !reference_reading_c.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        if reference_reading_c == 0.0 {
            return Err(CalibrationError::DivisionByZeroReference);
        }
        Ok(CalibrationSample {
            sensor_reading_c,
            reference_reading_c,
        })
    }

    pub fn residual(&self) -> f64 {
        self.reference_reading_c - self.sensor_reading_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub device_id: String,
    pub offset_c: f64,
    #[serde(default)]
    pub samples: Vec<CalibrationSample>,
}

impl CalibrationProfile {
    /// A profile that leaves readings untouched.
    pub fn identity(device_id: impl Into<String>) -> Self {
        CalibrationProfile {
            device_id: device_id.into(),
            offset_c: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn fitted(device_id: impl Into<String>, samples: Vec<CalibrationSample>) -> Result<Self, CalibrationError> {
        let offset_c = fit_offset(&samples)?;
        Ok(CalibrationProfile {
            device_id: device_id.into(),
            offset_c,
            samples,
        })
    }

    pub fn apply(&self, raw_c: f64) -> f64 {
        apply(self, raw_c)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !self.offset_c.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        for s in &self.samples {
            CalibrationSample::new(s.sensor_reading_c, s.reference_reading_c)?;
        }
        Ok(())
    }
}

/// Relative error of `x` against reference `y`, in percent.
pub fn relative_error(x: f64, y: f64) -> Result<f64, CalibrationError> {
    if y == 0.0 {
        return Err(CalibrationError::DivisionByZeroReference);
    }
    Ok((x - y).abs() / y * 100.0)
}

/// Mean of `reference - sensor` over the samples.
pub fn fit_offset(samples: &[CalibrationSample]) -> Result<f64, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::EmptySampleSet);
    }
    let sum: f64 = samples.iter().map(CalibrationSample::residual).sum();
    Ok(sum / samples.len() as f64)
}

pub fn apply(profile: &CalibrationProfile, raw_c: f64) -> f64 {
    raw_c + profile.offset_c
}

/// Rounds half away from zero to two decimals, the way the fixture tables print.
pub fn round_display(x: f64) -> f64 {
    // Nudge by a few ulps so values like 1.745 that are stored just below the
    // half still round up.
    let scaled = x * 100.0;
    let nudged = scaled + scaled.signum() * scaled.abs() * 4.0 * f64::EPSILON;
    nudged.round() / 100.0
}

/// Reads `sensor_c,reference_c` rows. A header line is allowed.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CalibrationError::Fixture(e.to_string()))?;
        if record.len() != 2 {
            return Err(CalibrationError::Fixture(format!("row {}: expected 2 columns", i + 1)));
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => samples.push(CalibrationSample::new(v[0], v[1])?),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CalibrationError::Fixture(format!("row {}: {e}", i + 1))),
        }
    }
    Ok(samples)
}

pub fn load_samples_csv(path: &Path) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let file = std::fs::File::open(path).map_err(|e| CalibrationError::Fixture(format!("{}: {e}", path.display())))?;
    read_samples_csv(file)
}
