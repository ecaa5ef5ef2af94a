//! The cradlewatch hub: device ingestion, the event log, replay and the
//! guardian HTTP API.
//!
//! [`processor::Hub`] is the synchronous core that owns the rules engine.
//! [`server`] wraps it in TCP and HTTP listeners.

pub mod config;
pub mod eventlog;
pub mod processor;
pub mod replay;
pub mod server;

pub use config::{ConfigError, HubConfig};
pub use eventlog::{LogKind, LogRecord};
pub use processor::{Hub, HubError, HubView, Stats};
pub use replay::{replay, ReplayError, ReplayReport};
pub use server::{serve, start, Running, ServeError};
