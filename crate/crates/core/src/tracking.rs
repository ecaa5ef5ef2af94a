//! RFID zone tracking and GPS location gating.
//!
//! Tag reads at exit readers flip the child to "outside home"; GPS fixes are
//! stored only while that flag is set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest perpendicular distance (cm) at which a crawling child's tag is read.
pub const CRAWLING_RANGE_CM: f64 = 6.0;
/// Largest perpendicular distance (cm) at which a standing child's tag is read.
pub const STANDING_RANGE_CM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("negative distance {0} cm")]
    NegativeDistance(f64),
    #[error("unknown reader `{0}`")]
    UnknownReader(String),
    #[error("invalid reader config `{0}`: mount height must be positive")]
    InvalidReader(String),
    #[error("invalid location fix ({lat}, {lon})")]
    InvalidFix { lat: f64, lon: f64 },
}

fn default_mount_height() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfidReaderConfig {
    pub reader_id: String,
    #[serde(default = "default_mount_height")]
    pub mount_height_cm: f64,
    pub zone: String,
    pub is_exit: bool,
}

impl RfidReaderConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.mount_height_cm.is_finite() && self.mount_height_cm > 0.0 {
            Ok(())
        } else {
            Err(TrackingError::InvalidReader(self.reader_id.clone()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Crawling,
    Standing,
}

impl Posture {
    pub fn range_cm(self) -> f64 {
        match self {
            Posture::Crawling => CRAWLING_RANGE_CM,
            Posture::Standing => STANDING_RANGE_CM,
        }
    }
}

/// Whether a reader picks up the tag at `distance_cm`. Thresholds are inclusive.
pub fn rfid_detect(posture: Posture, distance_cm: f64) -> Result<bool, TrackingError> {
    if distance_cm.is_nan() || distance_cm < 0.0 {
        return Err(TrackingError::NegativeDistance(distance_cm));
    }
    Ok(distance_cm <= posture.range_cm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationFix {
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "ts")]
    pub ts_ms: i64,
}

impl LocationFix {
    pub fn new(lat: f64, lon: f64, ts_ms: i64) -> Result<Self, TrackingError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(TrackingError::InvalidFix { lat, lon });
        }
        Ok(LocationFix { lat, lon, ts_ms })
    }
}

/// Result of a registered tag passing a reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneEvent {
    pub reader_id: String,
    pub zone: String,
    pub tag: String,
    pub ts_ms: i64,
    /// True when the reader guards an exit.
    pub trespass: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingState {
    pub outside_home: bool,
    pub last_trespass: Option<(String, i64)>,
    pub latest_fix: Option<LocationFix>,
    pub rejected_fixes: u64,
}

impl TrackingState {
    /// Stores `fix` iff the child is outside. Returns whether it was accepted.
    pub fn put_location(&mut self, fix: LocationFix) -> bool {
        if !self.outside_home {
            self.rejected_fixes += 1;
            return false;
        }
        // Later fixes win; an out-of-order older fix does not replace a newer one.
        match self.latest_fix {
            Some(current) if current.ts_ms > fix.ts_ms => {}
            _ => self.latest_fix = Some(fix),
        }
        true
    }

    pub fn latest_location(&self) -> Option<LocationFix> {
        self.latest_fix
    }

    /// Marks the child as back home. Location history is kept.
    pub fn reset_outside_home(&mut self) {
        self.outside_home = false;
    }
}

/// Reader and tag registries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub readers: BTreeMap<String, RfidReaderConfig>,
    pub tags: BTreeSet<String>,
}

impl TrackingConfig {
    pub fn new(readers: impl IntoIterator<Item = RfidReaderConfig>, tags: impl IntoIterator<Item = String>) -> Self {
        TrackingConfig {
            readers: readers.into_iter().map(|r| (r.reader_id.clone(), r)).collect(),
            tags: tags.into_iter().collect(),
        }
    }

    pub fn reader(&self, reader_id: &str) -> Result<&RfidReaderConfig, TrackingError> {
        self.readers
            .get(reader_id)
            .ok_or_else(|| TrackingError::UnknownReader(reader_id.to_string()))
    }

    /// Applies a tag read. Unregistered tags yield `Ok(None)` and leave the
    /// state untouched.
    pub fn on_rfid_read(
        &self,
        state: &mut TrackingState,
        reader_id: &str,
        tag: &str,
        ts_ms: i64,
    ) -> Result<Option<ZoneEvent>, TrackingError> {
        let reader = self.reader(reader_id)?;
        if !self.tags.contains(tag) {
            return Ok(None);
        }
        if reader.is_exit {
            state.outside_home = true;
            state.last_trespass = Some((reader.reader_id.clone(), ts_ms));
        }
        Ok(Some(ZoneEvent {
            reader_id: reader.reader_id.clone(),
            zone: reader.zone.clone(),
            tag: tag.to_string(),
            ts_ms,
            trespass: reader.is_exit,
        }))
    }
}
