//! Shipped scenarios against a fresh in-process hub.

use std::path::{Path, PathBuf};

use cradlewatch_core::exec::Execution;
use cradlewatch_hub::{replay, start, HubConfig};
use cradlewatch_sim::baby::{episode_counts, BabyParams};
use cradlewatch_sim::{check, run, ExpectedOutcome, RunOptions, Scenario, SimError, Transcript};

const SCENARIOS: [&str; 6] = [
    "temperature-hot-cold",
    "wet-mattress",
    "rfid-crawl-stand",
    "trespass-gps",
    "crying-night",
    "solar-day",
];

fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn hub_config(log: &Path) -> HubConfig {
    let mut cfg = HubConfig::load(&dir().join("hub.json")).unwrap();
    cfg.listen.device = "127.0.0.1:0".parse().unwrap();
    cfg.listen.http = "127.0.0.1:0".parse().unwrap();
    cfg.log_path = log.to_path_buf();
    cfg
}

/// One run on a fresh hub; returns the transcript and the hub's log path.
async fn run_fresh(name: &str, speed: f64, tmp: &Path, tag: &str) -> (Transcript, PathBuf) {
    let log = tmp.join(format!("{name}-{tag}.log"));
    let hub = start(hub_config(&log)).await.unwrap();
    let scenario = Scenario::load(&dir().join(format!("{name}.json"))).unwrap();
    let mut opts = RunOptions::new(hub.device_addr.to_string());
    opts.http = Some(hub.http_addr.to_string());
    opts.speed = Some(speed);
    let t = run(&scenario, &opts).await.unwrap();
    hub.stop().await.unwrap();
    (t, log)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn shipped_scenarios_meet_expectations_and_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    for name in SCENARIOS {
        let (a, log) = run_fresh(name, 1e9, tmp.path(), "a").await;
        let (b, _) = run_fresh(name, 1e9, tmp.path(), "b").await;
        assert_eq!(a.to_canonical(), b.to_canonical(), "{name} differs between runs");

        let expected = ExpectedOutcome::load(&dir().join(format!("{name}.expected.json"))).unwrap();
        let report = check(&a, &expected);
        assert!(report.passed(), "{name}: {report}");

        let rules = hub_config(&log).rules_config().unwrap();
        let replayed = replay(rules, &log).unwrap();
        let logged: Vec<_> = a.alerts().cloned().collect();
        let regenerated: Vec<_> = replayed.alerts.iter().map(|x| serde_json::to_value(x).unwrap()).collect();
        assert_eq!(logged, regenerated, "{name}: replay disagrees with the stream");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn real_time_speed_gives_the_same_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let (fast, _) = run_fresh("wet-mattress", 1e9, tmp.path(), "fast").await;
    let (paced, _) = run_fresh("wet-mattress", 100.0, tmp.path(), "paced").await;
    assert_eq!(fast.to_canonical(), paced.to_canonical());
}

#[test]
fn scenario_plans_are_reproducible() {
    for name in SCENARIOS {
        let path = dir().join(format!("{name}.json"));
        assert_eq!(
            Scenario::load(&path).unwrap().plan().unwrap(),
            Scenario::load(&path).unwrap().plan().unwrap()
        );
    }
}

#[test]
fn standing_two_cm_at_the_door_sends_nothing() {
    let s = Scenario::load(&dir().join("rfid-crawl-stand.json")).unwrap();
    let plan = s.plan().unwrap();
    // Six directives; crawling at 8 cm and standing at 2 cm are out of range.
    assert_eq!(plan.len(), 4);
    assert!(plan.iter().all(|p| p.at_ms != 0 && p.at_ms != 30_000));
}

#[tokio::test]
async fn unreachable_hub_is_connection_refused() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let s = Scenario::load(&dir().join("solar-day.json")).unwrap();
    let mut opts = RunOptions::new(format!("127.0.0.1:{port}"));
    opts.http = Some(format!("127.0.0.1:{port}"));
    assert!(matches!(run(&s, &opts).await, Err(SimError::ConnectionRefused { .. })));
}

#[test]
fn hourly_episode_counts_stay_in_range() {
    let seeds: Vec<u64> = (0..100).collect();
    let p = BabyParams::default();
    assert_eq!(p.mean_interval_ms, 600_000.0);
    let counts = episode_counts(Execution::default(), &seeds, 3_600_000, &p);
    assert!(counts.iter().all(|c| (1..=20).contains(c)), "{counts:?}");
}
