//! Rebuilding state from a log, and checking the log against the engine.

use std::collections::VecDeque;
use std::path::Path;

use cradlewatch_core::protocol::{decode_command, decode_event};
use cradlewatch_core::rules::{Alert, RulesConfig, StateView};
use thiserror::Error;

use crate::eventlog::{self, LogError, LogKind, LogRecord};
use crate::processor::{derived_records, Hub, HubError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("record {index}: cannot decode {kind:?} payload: {reason}")]
    Payload {
        index: usize,
        kind: LogKind,
        reason: String,
    },
    #[error("record {index}: engine refused logged input: {source}")]
    Refused { index: usize, source: HubError },
    #[error("audit failure at record {index}: logged {found}, replay produced {expected}")]
    Mismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("audit failure: replay produced {expected} with no matching record (before record {index})")]
    Missing { index: usize, expected: String },
    #[error(transparent)]
    Config(#[from] cradlewatch_core::rules::RulesError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub view: StateView,
    pub records: usize,
    pub events: usize,
    /// Alerts regenerated by the engine; identical to the logged ones when
    /// replay succeeds.
    pub alerts: Vec<Alert>,
}

/// Folds `records` through a fresh hub and audits every derived record
/// (alerts, counter archives, accepted fixes) against what was logged.
pub fn replay_records(config: RulesConfig, records: &[LogRecord]) -> Result<(Hub, ReplayReport), ReplayError> {
    let mut hub = Hub::new(config)?;
    let mut pending: VecDeque<String> = VecDeque::new();
    let mut alerts = Vec::new();
    let mut events = 0;

    for (index, rec) in records.iter().enumerate() {
        let index = index + 1;
        hub.seen_ts(rec.ts_ms);
        if !rec.kind.is_input() {
            let found = rec.to_line();
            match pending.pop_front() {
                Some(expected) if expected == found => continue,
                Some(expected) => return Err(ReplayError::Mismatch { index, expected, found }),
                None => {
                    return Err(ReplayError::Mismatch {
                        index,
                        expected: "nothing".into(),
                        found,
                    })
                }
            }
        }
        if let Some(expected) = pending.pop_front() {
            return Err(ReplayError::Missing { index, expected });
        }
        let payload = rec.payload.to_string();
        let bad = |reason: String| ReplayError::Payload {
            index,
            kind: rec.kind,
            reason,
        };
        match rec.kind {
            LogKind::Event => {
                let e = decode_event(payload.as_bytes()).map_err(|e| bad(e.to_string()))?;
                let out = hub
                    .apply_event(&e)
                    .map_err(|source| ReplayError::Refused { index, source })?;
                pending.extend(derived_records(&out, rec.ts_ms).iter().map(LogRecord::to_line));
                alerts.extend(out.alerts);
                events += 1;
            }
            LogKind::Command => {
                let c = decode_command(payload.as_bytes()).map_err(|e| bad(e.to_string()))?;
                hub.apply_command(&c)
                    .map_err(|source| ReplayError::Refused { index, source })?;
            }
            LogKind::ResetHome => hub.apply_reset_home(),
            _ => unreachable!("derived kinds handled above"),
        }
    }
    if let Some(expected) = pending.pop_front() {
        return Err(ReplayError::Missing {
            index: records.len() + 1,
            expected,
        });
    }
    let report = ReplayReport {
        view: hub.engine().snapshot(),
        records: records.len(),
        events,
        alerts,
    };
    Ok((hub, report))
}

/// Replays the log at `path`. A missing or empty log gives a fresh state.
pub fn replay(config: RulesConfig, path: &Path) -> Result<ReplayReport, ReplayError> {
    let records = eventlog::read_log(path)?;
    replay_records(config, &records).map(|(_, r)| r)
}
