//! Run transcripts and checking them against expected outcomes.

use std::fmt;
use std::path::Path;

use cradlewatch_core::canonical;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TRANSCRIPT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    /// A wire event as sent.
    Sent(Value),
    /// An alert as received on the stream.
    Alert(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub v: u64,
    pub scenario: String,
    pub start_ts: i64,
    pub entries: Vec<Entry>,
    /// Hub state after the last event, without session statistics.
    pub state: Value,
}

impl Transcript {
    /// Canonical JSON; equal runs give equal bytes.
    pub fn to_canonical(&self) -> String {
        let mut s = canonical::to_string(self).expect("transcripts are always serializable");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn alerts(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Alert(a) => Some(a),
            Entry::Sent(_) => None,
        })
    }

    pub fn sent(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Sent(s) => Some(s),
            Entry::Alert(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedAlert {
    #[serde(rename = "type")]
    pub kind: String,
    pub at_ms: i64,
    #[serde(default)]
    pub tolerance_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCounters {
    pub crying: u64,
    pub movement: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedOutcome {
    pub v: u64,
    pub alerts: Vec<ExpectedAlert>,
    #[serde(default)]
    pub counters: Option<ExpectedCounters>,
    /// Keys that must match the final state exactly.
    #[serde(default)]
    pub state: serde_json::Map<String, Value>,
}

impl ExpectedOutcome {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub kind: String,
    pub at_ms: i64,
}

impl fmt::Display for Observed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {} ms", self.kind, self.at_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub matched: usize,
    pub missing: Vec<ExpectedAlert>,
    pub unexpected: Vec<Observed>,
    pub mismatches: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.mismatches.is_empty()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(f, "{verdict}: {} expected alerts matched", self.matched)?;
        for m in &self.missing {
            writeln!(f, "  missing: {} at {} ms (±{} ms)", m.kind, m.at_ms, m.tolerance_ms)?;
        }
        for u in &self.unexpected {
            writeln!(f, "  unexpected: {u}")?;
        }
        for m in &self.mismatches {
            writeln!(f, "  mismatch: {m}")?;
        }
        Ok(())
    }
}

fn observed(t: &Transcript) -> Vec<Observed> {
    t.alerts()
        .map(|a| Observed {
            kind: a["type"].as_str().unwrap_or("?").to_string(),
            at_ms: a["ts"].as_i64().unwrap_or(i64::MIN).saturating_sub(t.start_ts),
        })
        .collect()
}

/// Structural equality with numbers compared by value, so `0` matches `0.0`.
fn same_json(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same_json(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| same_json(v, w)))
        }
        _ => a == b,
    }
}

/// Matches expected alerts in order. An observed alert that does not match
/// the next expected one is reported as unexpected; expected alerts left
/// over at the end are missing.
pub fn check(t: &Transcript, expected: &ExpectedOutcome) -> CheckReport {
    let mut report = CheckReport::default();
    let mut next = expected.alerts.iter().peekable();
    for o in observed(t) {
        match next.peek() {
            Some(e) if e.kind == o.kind && o.at_ms.abs_diff(e.at_ms) <= e.tolerance_ms => {
                report.matched += 1;
                next.next();
            }
            _ => report.unexpected.push(o),
        }
    }
    report.missing.extend(next.cloned());

    if let Some(c) = expected.counters {
        for (name, want) in [("crying", c.crying), ("movement", c.movement)] {
            let got = t.state["counters"][name].as_u64();
            if got != Some(want) {
                report.mismatches.push(format!("counters.{name}: expected {want}, got {got:?}"));
            }
        }
    }
    for (key, want) in &expected.state {
        let got = t.state.get(key).unwrap_or(&Value::Null);
        if !same_json(got, want) {
            report.mismatches.push(format!("state.{key}: expected {want}, got {got}"));
        }
    }
    report
}
