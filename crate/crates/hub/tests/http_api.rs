//! End-to-end checks of the hub over real sockets.

use std::path::Path;
use std::time::Duration;

use cradlewatch_core::protocol::{encode_event, encode_hello, Reading, SensorEvent};
use cradlewatch_hub::eventlog::{read_log, LogKind};
use cradlewatch_hub::{replay, start, HubConfig, Running};
use futures::StreamExt;
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

const DAY0: i64 = 1_709_251_200_000;

fn config(log: &Path) -> HubConfig {
    let text = serde_json::json!({
        "listen": {"device": "127.0.0.1:0", "http": "127.0.0.1:0"},
        "devices": [
            {"id": "mic", "role": "sensor", "kinds": ["sound"]},
            {"id": "temp", "role": "sensor", "kinds": ["temp_c"]},
            {"id": "door", "role": "sensor", "kinds": ["rfid_read"]},
            {"id": "gps", "role": "sensor", "kinds": ["gps_fix"]},
            {"id": "led", "role": "actuator", "commands": ["led_on", "led_off"]}
        ],
        "tags": ["baby-1"],
        "readers": [{"reader_id": "front", "zone": "front door", "is_exit": true}],
        "log_path": log,
    });
    HubConfig::from_json(&text.to_string()).unwrap()
}

struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    fn new(hub: &Running) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: format!("http://{}", hub.http_addr),
        }
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status().as_u16();
        let text = r.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    async fn post(&self, path: &str, body: &str) -> u16 {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .body(body.to_string())
            .send()
            .await
            .unwrap();
        r.status().as_u16()
    }

    /// Waits until the hub has taken `n` device lines off its queue.
    async fn await_lines(&self, n: u64) {
        for _ in 0..500 {
            let (_, v) = self.get("/state").await;
            if v["stats"]["lines"].as_u64().unwrap() >= n {
                return;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("hub never processed {n} lines");
    }
}

async fn send(stream: &mut TcpStream, e: &SensorEvent) {
    stream.write_all(encode_event(e).as_bytes()).await.unwrap();
}

#[tokio::test]
async fn three_event_session_is_logged_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("hub.log");
    let hub = start(config(&log)).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0, Reading::Sound(true))).await;
    send(&mut mic, &SensorEvent::new("mic", 2, DAY0 + 1_000, Reading::Sound(false))).await;
    send(&mut mic, &SensorEvent::new("mic", 3, DAY0 + 90_000, Reading::Sound(true))).await;
    client.await_lines(3).await;
    hub.stop().await.unwrap();

    let recs = read_log(&log).unwrap();
    let kinds: Vec<_> = recs.iter().map(|r| r.kind).collect();
    use LogKind::*;
    assert_eq!(kinds, [Event, Alert, Event, Event, Alert]);
    assert_eq!(recs[4].payload["detail"]["count"], 2);
    assert!(recs.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
}

#[tokio::test]
async fn location_is_gated_by_trespass() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(config(&dir.path().join("hub.log"))).await.unwrap();
    let client = Client::new(&hub);
    let mut door = TcpStream::connect(hub.device_addr).await.unwrap();
    let mut gps = TcpStream::connect(hub.device_addr).await.unwrap();
    let fix = |seq, ts| SensorEvent::new("gps", seq, ts, Reading::GpsFix { lat: 3.1, lon: 101.6 });

    send(&mut gps, &fix(1, DAY0)).await;
    client.await_lines(1).await;
    assert_eq!(client.get("/location").await.0, 404);

    let read = Reading::RfidRead {
        tag: "baby-1".into(),
        reader: "front".into(),
    };
    send(&mut door, &SensorEvent::new("door", 1, DAY0 + 10, read)).await;
    client.await_lines(2).await;
    send(&mut gps, &fix(2, DAY0 + 20)).await;
    client.await_lines(3).await;
    let (status, body) = client.get("/location").await;
    assert_eq!(status, 200);
    assert_eq!(body, serde_json::json!({"lat": 3.1, "lon": 101.6, "ts": DAY0 + 20}));

    assert_eq!(client.post("/reset-home", "").await, 200);
    let (_, state) = client.get("/state").await;
    assert_eq!(state["outside_home"], false);
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn commands_are_forwarded_to_the_actuator() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(config(&dir.path().join("hub.log"))).await.unwrap();
    let client = Client::new(&hub);
    let led = TcpStream::connect(hub.device_addr).await.unwrap();
    let (rd, mut wr) = led.into_split();
    wr.write_all(encode_hello("led").as_bytes()).await.unwrap();
    client.await_lines(1).await;

    assert_eq!(client.post("/cmd", r#"{"v":1,"cmd":"led_on","ts":5}"#).await, 202);
    let mut lines = BufReader::new(rd).lines();
    let got = tokio::time::timeout(Duration::from_secs(5), lines.next_line())
        .await
        .unwrap()
        .unwrap()
        .unwrap();
    assert_eq!(got, r#"{"v":1,"cmd":"led_on","ts":5}"#);
    let (_, state) = client.get("/state").await;
    assert_eq!(state["actuators"]["led"], true);

    assert_eq!(client.post("/cmd", r#"{"v":1,"cmd":"white_noise_on","ts":6}"#).await, 409);
    assert_eq!(client.post("/cmd", r#"{"v":1,"cmd":"led_on""#).await, 400);
    assert_eq!(client.post("/cmd", r#"{"v":1,"cmd":"disco","ts":6}"#).await, 400);
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn stream_delivers_each_alert_once_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(config(&dir.path().join("hub.log"))).await.unwrap();
    let client = Client::new(&hub);
    let subscribe = || async {
        client
            .http
            .get(format!("{}/stream", client.base))
            .send()
            .await
            .unwrap()
            .bytes_stream()
    };
    let (mut a, mut b) = (subscribe().await, subscribe().await);

    let mut temp = TcpStream::connect(hub.device_addr).await.unwrap();
    // Alternating hot and cold readings, each past the debounce window.
    for i in 0..10u64 {
        let c = if i % 2 == 0 { 30.0 } else { 10.0 };
        send(&mut temp, &SensorEvent::new("temp", i + 1, DAY0 + i as i64 * 70_000, Reading::TempC(c))).await;
    }
    client.await_lines(10).await;

    async fn collect<S, B>(s: &mut S, n: usize) -> Vec<Value>
    where
        S: futures::Stream<Item = reqwest::Result<B>> + Unpin,
        B: AsRef<[u8]>,
    {
        let mut text = String::new();
        let mut out = Vec::new();
        while out.len() < n {
            let chunk = tokio::time::timeout(Duration::from_secs(5), s.next()).await.unwrap().unwrap().unwrap();
            text.push_str(std::str::from_utf8(chunk.as_ref()).unwrap());
            while let Some(end) = text.find("\n\n") {
                let frame: String = text.drain(..end + 2).collect();
                if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data: ")) {
                    out.push(serde_json::from_str(data).unwrap());
                }
            }
        }
        out
    }
    let got_a = collect(&mut a, 10).await;
    let got_b = collect(&mut b, 10).await;
    assert_eq!(got_a, got_b);
    let ts: Vec<i64> = got_a.iter().map(|v| v["ts"].as_i64().unwrap()).collect();
    assert_eq!(ts, (0..10).map(|i| DAY0 + i * 70_000).collect::<Vec<_>>());
    assert_eq!(got_a[0]["type"], "temp_high");
    assert_eq!(got_a[1]["type"], "temp_low");
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn reads_do_not_mutate() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("hub.log");
    let hub = start(config(&log)).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0, Reading::Sound(true))).await;
    client.await_lines(1).await;

    let before = client.get("/state").await;
    let log_before = std::fs::read(&log).unwrap();
    let paths = ["/state", "/counters", "/location", "/events", "/events?since=0"];
    let mut rng = 0x2545_f491_4f6c_dd1du64;
    for _ in 0..1000 {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        client.get(paths[(rng % paths.len() as u64) as usize]).await;
    }
    assert_eq!(client.get("/state").await, before);
    assert_eq!(std::fs::read(&log).unwrap(), log_before);
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn events_endpoint_filters_by_ts() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(config(&dir.path().join("hub.log"))).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    for i in 0..4u64 {
        send(&mut mic, &SensorEvent::new("mic", i + 1, DAY0 + i as i64 * 1000, Reading::Sound(i % 2 == 0))).await;
    }
    client.await_lines(4).await;
    let (_, all) = client.get("/events").await;
    let (_, tail) = client.get(&format!("/events?since={}", DAY0 + 2000)).await;
    assert_eq!(all.as_array().unwrap().len(), 5);
    let tail = tail.as_array().unwrap();
    assert!(tail.iter().all(|r| r["ts"].as_i64().unwrap() >= DAY0 + 2000));
    assert_eq!(tail.len(), 2);
    assert_eq!(client.get("/events?since=soon").await.0, 400);
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn bad_lines_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let hub = start(config(&dir.path().join("hub.log"))).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    mic.write_all(b"not json\n").await.unwrap();
    mic.write_all(b"{\"v\":1,\"dev\":\"mic\",\"seq\":1,\"ts\":0,\"kind\":\"smell\",\"val\":1}\n").await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0, Reading::Sound(true))).await;
    // The connection is now bound to `mic`.
    send(&mut mic, &SensorEvent::new("temp", 1, DAY0, Reading::TempC(22.0))).await;
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0 + 5, Reading::Sound(false))).await;
    client.await_lines(5).await;
    let (_, state) = client.get("/state").await;
    assert_eq!(state["stats"]["events"], 1);
    assert_eq!(state["stats"]["rejected"], 4);
    assert_eq!(state["sound"], "YES");
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn restart_recovers_state_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("hub.log");
    let hub = start(config(&log)).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0, Reading::Sound(true))).await;
    client.await_lines(1).await;
    assert_eq!(client.post("/cmd", r#"{"v":1,"cmd":"led_on","ts":5}"#).await, 202);
    let (_, before) = client.get("/state").await;
    hub.stop().await.unwrap();

    let report = replay(config(&log).rules_config().unwrap(), &log).unwrap();
    assert_eq!(report.alerts.len(), 1);

    let hub = start(config(&log)).await.unwrap();
    let client = Client::new(&hub);
    let (_, after) = client.get("/state").await;
    assert_eq!(after["counters"], before["counters"]);
    assert_eq!(after["actuators"], before["actuators"]);
    // The recovered sequence guard still rejects the old seq.
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0 + 10, Reading::Sound(false))).await;
    client.await_lines(1).await;
    assert_eq!(client.get("/state").await.1["stats"]["rejected"], 1);
    hub.stop().await.unwrap();
}

#[tokio::test]
async fn occupied_port_is_a_bind_error() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = config(&dir.path().join("hub.log"));
    cfg.listen.http = taken.local_addr().unwrap();
    let err = start(cfg).await.err().expect("bind must fail");
    assert_eq!(err.exit_code(), 2);
}

#[tokio::test]
async fn tampered_log_blocks_startup() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("hub.log");
    let hub = start(config(&log)).await.unwrap();
    let client = Client::new(&hub);
    let mut mic = TcpStream::connect(hub.device_addr).await.unwrap();
    send(&mut mic, &SensorEvent::new("mic", 1, DAY0, Reading::Sound(true))).await;
    client.await_lines(1).await;
    hub.stop().await.unwrap();
    let text = std::fs::read_to_string(&log).unwrap().replace("\"count\":1", "\"count\":2");
    std::fs::write(&log, text).unwrap();
    let err = start(config(&log)).await.err().expect("audit must fail");
    assert_eq!(err.exit_code(), 1);
}
