//! Core of the cradlewatch baby-surveillance hub.
//!
//! Everything here is synchronous and deterministic: the device wire
//! protocol, temperature calibration, mattress and solar models, RFID/GPS
//! tracking, the white-noise spectral analyzer and the alert rules engine.
//! The network service lives in `cradlewatch-hub`.

pub mod acoustics;
pub mod calibration;
pub mod canonical;
pub mod environment;
pub mod exec;
pub mod protocol;
pub mod rules;
pub mod tracking;

pub use exec::Execution;
pub use protocol::{Command, CommandKind, Reading, SensorEvent, SensorKind};
pub use rules::{Alert, AlertKind, Engine, RulesConfig, StateView};
