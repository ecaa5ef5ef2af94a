//! The single ordered processing sequence: engine, sequence guard and log.
//!
//! Everything that mutates surveillance state goes through [`Hub`]. The async
//! server owns one `Hub` on a dedicated task; replay drives a second one from
//! a log file.

use std::io;

use cradlewatch_core::protocol::{self, Command, ProtocolError, SensorEvent, SequenceGuard};
use cradlewatch_core::rules::{Alert, Engine, Forward, Note, Outcome, RulesConfig, RulesError, StateView};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::eventlog::{LogKind, LogRecord, LogWriter};

#[derive(Debug, Error)]
pub enum HubError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("log write failed: {0}")]
    Log(#[from] io::Error),
}

/// Per-session counters, reported by `GET /state`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// Device lines taken off the queue, including rejected ones and hellos.
    pub lines: u64,
    pub events: u64,
    pub rejected: u64,
    pub alerts: u64,
    pub commands: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubView {
    #[serde(flatten)]
    pub state: StateView,
    pub stats: Stats,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("log payloads are always serializable")
}

pub(crate) fn event_payload(e: &SensorEvent) -> Value {
    serde_json::from_str(&protocol::encode_event(e)).expect("encoded events are valid JSON")
}

pub(crate) fn command_payload(c: &Command) -> Value {
    serde_json::from_str(&protocol::encode_command(c)).expect("encoded commands are valid JSON")
}

/// Log records derived from one engine outcome, in the order they are written.
pub(crate) fn derived_records(out: &Outcome, ts: i64) -> Vec<LogRecord> {
    let mut recs = Vec::new();
    for note in &out.notes {
        match note {
            Note::CounterArchive(a) => recs.push(LogRecord::new(ts, LogKind::CounterArchive, to_value(a))),
            Note::FixAccepted(f) => recs.push(LogRecord::new(ts, LogKind::Fix, to_value(f))),
            _ => {}
        }
    }
    for a in &out.alerts {
        recs.push(LogRecord::new(ts, LogKind::Alert, to_value(a)));
    }
    recs
}

fn trace_notes(out: &Outcome) {
    for note in &out.notes {
        match note {
            Note::UnregisteredTag { reader, tag, ts_ms } => {
                log::info!("ignored unregistered tag {tag} at reader {reader} (ts {ts_ms})")
            }
            Note::FixRejected(f) => log::debug!("fix at ts {} dropped: child is home", f.ts_ms),
            Note::Suppressed { kind, ts_ms } => log::debug!("{kind} at ts {ts_ms} suppressed by debounce"),
            Note::ZonePresence(z) => log::debug!("tag {} seen in zone {}", z.tag, z.zone),
            Note::CounterArchive(a) => log::info!("archived counters for {}", a.date),
            Note::FixAccepted(_) => {}
        }
    }
}

#[derive(Debug)]
pub struct Hub {
    engine: Engine,
    guard: SequenceGuard,
    log: Option<LogWriter>,
    last_ts: i64,
    stats: Stats,
}

impl Hub {
    /// A hub with no log attached.
    pub fn new(config: RulesConfig) -> Result<Self, RulesError> {
        Ok(Hub {
            engine: Engine::new(config)?,
            guard: SequenceGuard::new(),
            log: None,
            last_ts: i64::MIN,
            stats: Stats::default(),
        })
    }

    pub fn with_log(mut self, log: LogWriter) -> Self {
        self.log = Some(log);
        self
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn view(&self) -> HubView {
        HubView {
            state: self.engine.snapshot(),
            stats: self.stats,
        }
    }

    pub fn last_seq(&self, device_id: &str) -> Option<u64> {
        self.guard.last_seq(device_id)
    }

    /// Timestamp for the next batch: the engine's clock, never moving back.
    fn stamp(&mut self) -> i64 {
        self.last_ts = self.last_ts.max(self.engine.state().clock_ms);
        self.last_ts
    }

    fn write(&mut self, recs: &[LogRecord]) -> io::Result<()> {
        match &mut self.log {
            Some(w) => w.append(recs),
            None => Ok(()),
        }
    }

    /// Counts a line that carried no event (a hello).
    pub fn note_line(&mut self) {
        self.stats.lines += 1;
    }

    /// Counts a line that failed to decode.
    pub fn reject_line(&mut self, err: &ProtocolError) {
        self.stats.lines += 1;
        self.stats.rejected += 1;
        log::info!("rejected device line: {err}");
    }

    /// Processes one decoded device event. The event and everything it
    /// produced are logged as one batch; nothing is logged for a rejection.
    pub fn ingest(&mut self, e: &SensorEvent) -> Result<Vec<Alert>, HubError> {
        self.stats.lines += 1;
        let out = self.apply_event(e).inspect_err(|err| {
            self.stats.rejected += 1;
            log::info!("rejected event from {}: {err}", e.device_id);
        })?;
        let ts = self.stamp();
        let mut recs = vec![LogRecord::new(ts, LogKind::Event, event_payload(e))];
        recs.extend(derived_records(&out, ts));
        self.write(&recs)?;
        self.stats.events += 1;
        self.stats.alerts += out.alerts.len() as u64;
        Ok(out.alerts)
    }

    /// Sequence check and engine step, with no logging. The sequence guard
    /// only advances once the engine has accepted the event.
    pub(crate) fn apply_event(&mut self, e: &SensorEvent) -> Result<Outcome, HubError> {
        if let Some(last) = self.guard.last_seq(&e.device_id) {
            if e.seq <= last {
                return Err(ProtocolError::StaleSequence {
                    device: e.device_id.clone(),
                    seq: e.seq,
                    last,
                }
                .into());
            }
        }
        let out = self.engine.process_event(e)?;
        self.guard.admit(e).expect("sequence checked above");
        trace_notes(&out);
        Ok(out)
    }

    /// Applies a guardian command; returns the line to forward, if any.
    pub fn command(&mut self, c: &Command) -> Result<Option<Forward>, HubError> {
        let fwd = self.engine.process_command(c)?;
        let ts = self.stamp();
        self.write(&[LogRecord::new(ts, LogKind::Command, command_payload(c))])?;
        self.stats.commands += 1;
        Ok(fwd)
    }

    pub(crate) fn apply_command(&mut self, c: &Command) -> Result<Option<Forward>, HubError> {
        Ok(self.engine.process_command(c)?)
    }

    pub fn reset_home(&mut self) -> Result<(), HubError> {
        self.engine.reset_outside_home();
        let ts = self.stamp();
        self.write(&[LogRecord::new(ts, LogKind::ResetHome, json!({}))])?;
        Ok(())
    }

    pub(crate) fn apply_reset_home(&mut self) {
        self.engine.reset_outside_home();
    }

    /// Advances the log clock to a replayed record's timestamp.
    pub(crate) fn seen_ts(&mut self, ts: i64) {
        self.last_ts = self.last_ts.max(ts);
    }

    pub fn sync_log(&mut self) -> io::Result<()> {
        match &mut self.log {
            Some(w) => w.sync(),
            None => Ok(()),
        }
    }
}
