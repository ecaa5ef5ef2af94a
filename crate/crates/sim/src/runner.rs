//! Driving a live hub through a scenario.
//!
//! Each simulated device gets its own TCP connection. After every sent line
//! the runner waits until the hub reports that line processed and until the
//! stream has delivered every alert the hub has emitted so far, so the
//! transcript interleaving does not depend on scheduling or on `speed`.

use std::net::SocketAddr;
use std::time::Duration;

use cradlewatch_core::protocol::{encode_event, encode_hello};
use futures::StreamExt;
use serde_json::Value;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::mpsc;

use crate::scenario::{Scenario, ScenarioError};
use crate::transcript::{Entry, Transcript, TRANSCRIPT_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("connection refused by {addr}: {reason}")]
    ConnectionRefused { addr: String, reason: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("hub http: {0}")]
    Http(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error("device connection: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Device listener, `host:port`.
    pub target: String,
    /// HTTP listener; defaults to the target host with the next port.
    pub http: Option<String>,
    /// Overrides the scenario's speed multiplier.
    pub speed: Option<f64>,
    /// Upper bound on any single wait for the hub.
    pub timeout: Duration,
}

impl RunOptions {
    pub fn new(target: impl Into<String>) -> Self {
        RunOptions {
            target: target.into(),
            http: None,
            speed: None,
            timeout: Duration::from_secs(10),
        }
    }
}

async fn resolve(addr: &str) -> Result<SocketAddr, SimError> {
    let refused = |reason: String| SimError::ConnectionRefused {
        addr: addr.to_string(),
        reason,
    };
    tokio::net::lookup_host(addr)
        .await
        .map_err(|e| refused(e.to_string()))?
        .next()
        .ok_or_else(|| refused("no address".into()))
}

struct HubApi {
    client: reqwest::Client,
    base: String,
    timeout: Duration,
}

impl HubApi {
    async fn state(&self) -> Result<Value, SimError> {
        let url = format!("{}/state", self.base);
        let r = self.client.get(&url).send().await.map_err(|e| {
            if e.is_connect() {
                SimError::ConnectionRefused {
                    addr: self.base.clone(),
                    reason: e.to_string(),
                }
            } else {
                SimError::Http(e.to_string())
            }
        })?;
        let text = r.text().await.map_err(|e| SimError::Http(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| SimError::Http(format!("bad /state body: {e}")))
    }

    fn stat(state: &Value, name: &str) -> u64 {
        state["stats"][name].as_u64().unwrap_or(0)
    }

    /// Polls `/state` until the hub has taken `lines` lines off its queue.
    async fn await_lines(&self, lines: u64) -> Result<Value, SimError> {
        let deadline = tokio::time::Instant::now() + self.timeout;
        loop {
            let st = self.state().await?;
            if Self::stat(&st, "lines") >= lines {
                return Ok(st);
            }
            if tokio::time::Instant::now() > deadline {
                return Err(SimError::Timeout(format!("hub to process line {lines}")));
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    }
}

/// Splits an SSE byte stream into alert JSON values.
fn spawn_stream_reader(resp: reqwest::Response) -> mpsc::UnboundedReceiver<Value> {
    let (tx, rx) = mpsc::unbounded_channel();
    tokio::spawn(async move {
        let mut body = resp.bytes_stream();
        let mut buf = String::new();
        while let Some(Ok(chunk)) = body.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buf.find("\n\n") {
                let frame: String = buf.drain(..end + 2).collect();
                let data: Vec<&str> = frame
                    .lines()
                    .filter_map(|l| l.trim_end_matches('\r').strip_prefix("data:"))
                    .map(|d| d.strip_prefix(' ').unwrap_or(d))
                    .collect();
                if data.is_empty() {
                    continue;
                }
                match serde_json::from_str(&data.join("\n")) {
                    Ok(v) => {
                        if tx.send(v).is_err() {
                            return;
                        }
                    }
                    Err(e) => log::warn!("unparseable stream frame: {e}"),
                }
            }
        }
    });
    rx
}

/// Runs `scenario` against the hub at `opts.target` and records what was
/// sent and what the stream delivered.
pub async fn run(scenario: &Scenario, opts: &RunOptions) -> Result<Transcript, SimError> {
    let plan = scenario.plan()?;
    let speed = opts.speed.unwrap_or(scenario.speed);
    let device_addr = resolve(&opts.target).await?;
    let http = match &opts.http {
        Some(h) => h.clone(),
        None => {
            let mut a = device_addr;
            a.set_port(a.port().wrapping_add(1));
            a.to_string()
        }
    };
    let api = HubApi {
        client: reqwest::Client::new(),
        base: format!("http://{http}"),
        timeout: opts.timeout,
    };

    let start = api.state().await?;
    let mut lines = HubApi::stat(&start, "lines");
    let base_alerts = HubApi::stat(&start, "alerts");
    let stream = api
        .client
        .get(format!("{}/stream", api.base))
        .send()
        .await
        .map_err(|e| SimError::Http(e.to_string()))?;
    if !stream.status().is_success() {
        return Err(SimError::Http(format!("/stream answered {}", stream.status())));
    }
    let mut alerts = spawn_stream_reader(stream);

    let mut conns = std::collections::BTreeMap::new();
    for d in &scenario.devices {
        let mut s = TcpStream::connect(device_addr)
            .await
            .map_err(|e| SimError::ConnectionRefused {
                addr: device_addr.to_string(),
                reason: e.to_string(),
            })?;
        s.set_nodelay(true)?;
        s.write_all(encode_hello(&d.id).as_bytes()).await?;
        lines += 1;
        conns.insert(d.id.clone(), s);
    }
    api.await_lines(lines).await?;

    let mut entries = Vec::new();
    let mut received = 0u64;
    let mut prev_at = plan.first().map_or(0, |p| p.at_ms);
    for p in &plan {
        let gap_ms = (p.at_ms - prev_at) as f64 / speed;
        if gap_ms >= 0.5 {
            tokio::time::sleep(Duration::from_secs_f64(gap_ms / 1000.0)).await;
        }
        prev_at = p.at_ms;

        let line = encode_event(&p.event);
        let conn = conns.get_mut(&p.event.device_id).expect("plan only uses scenario devices");
        conn.write_all(line.as_bytes()).await?;
        lines += 1;
        entries.push(Entry::Sent(serde_json::from_str(&line).expect("encoded events are JSON")));

        let st = api.await_lines(lines).await?;
        let emitted = HubApi::stat(&st, "alerts") - base_alerts;
        while received < emitted {
            let next = tokio::time::timeout(opts.timeout, alerts.recv()).await;
            match next {
                Ok(Some(a)) => {
                    entries.push(Entry::Alert(a));
                    received += 1;
                }
                Ok(None) => return Err(SimError::Http("alert stream closed".into())),
                Err(_) => return Err(SimError::Timeout(format!("alert {} on the stream", received + 1))),
            }
        }
    }

    let mut state = api.state().await?;
    if let Value::Object(m) = &mut state {
        m.remove("stats");
    }
    Ok(Transcript {
        v: TRANSCRIPT_VERSION,
        scenario: scenario.name.clone(),
        start_ts: scenario.start_ts,
        entries,
        state,
    })
}
