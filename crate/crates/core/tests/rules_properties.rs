use std::collections::BTreeMap;

use cradlewatch_core::rules::{AlertKind, DeviceBinding, Engine, RulesConfig};
use cradlewatch_core::tracking::{RfidReaderConfig, TrackingConfig};
use cradlewatch_core::{Reading, SensorEvent, SensorKind};
use proptest::prelude::*;

const T0: i64 = 1_709_251_200_000;

fn config() -> RulesConfig {
    let mut devices = BTreeMap::new();
    devices.insert(
        "cot".to_string(),
        DeviceBinding::Sensor {
            kinds: SensorKind::ALL.into_iter().collect(),
        },
    );
    RulesConfig {
        devices,
        tracking: TrackingConfig::new(
            [RfidReaderConfig {
                reader_id: "door".into(),
                mount_height_cm: 3.0,
                zone: "door".into(),
                is_exit: true,
            }],
            ["tag".to_string()],
        ),
        ..Default::default()
    }
}

/// Counts false-to-true transitions starting from a false level.
fn rising_edges(levels: &[bool]) -> u64 {
    let mut prev = false;
    let mut n = 0;
    for &l in levels {
        if l && !prev {
            n += 1;
        }
        prev = l;
    }
    n
}

fn arbitrary_reading() -> impl Strategy<Value = Reading> {
    prop_oneof![
        (15.0f64..30.0).prop_map(Reading::TempC),
        any::<bool>().prop_map(Reading::Sound),
        any::<bool>().prop_map(Reading::MotionCot),
        any::<bool>().prop_map(Reading::MotionRoom),
        any::<bool>().prop_map(Reading::IrStanding),
        (0.0f64..=100.0).prop_map(Reading::MoisturePct),
        Just(Reading::RfidRead { tag: "tag".into(), reader: "door".into() }),
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| Reading::GpsFix { lat, lon }),
        (0.0f64..25.0).prop_map(Reading::SolarV),
    ]
}

/// Events with non-decreasing timestamps, steps up to 90 s.
fn timeline() -> impl Strategy<Value = Vec<SensorEvent>> {
    prop::collection::vec((0i64..90_000, arbitrary_reading()), 0..200).prop_map(|steps| {
        let mut ts = T0;
        steps
            .into_iter()
            .enumerate()
            .map(|(i, (dt, r))| {
                ts += dt;
                SensorEvent::new("cot", i as u64 + 1, ts, r)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn crying_counter_matches_recount(levels in prop::collection::vec(any::<bool>(), 0..300)) {
        let mut engine = Engine::new(config()).unwrap();
        for (i, &l) in levels.iter().enumerate() {
            engine.process_event(&SensorEvent::new("cot", i as u64, T0 + i as i64 * 1000, Reading::Sound(l))).unwrap();
        }
        prop_assert_eq!(engine.state().counters.crying, rising_edges(&levels));
    }

    #[test]
    fn debounce_window_is_respected(events in timeline()) {
        let mut engine = Engine::new(config()).unwrap();
        let mut last: BTreeMap<AlertKind, i64> = BTreeMap::new();
        for e in &events {
            for a in engine.process_event(e).unwrap().alerts {
                if let Some(prev) = last.insert(a.kind, a.ts_ms) {
                    prop_assert!(a.ts_ms - prev >= 60_000, "{:?} at {} after {}", a.kind, a.ts_ms, prev);
                }
            }
        }
    }

    #[test]
    fn replay_is_deterministic(events in timeline()) {
        let run = || {
            let mut engine = Engine::new(config()).unwrap();
            let alerts: Vec<_> = events.iter().flat_map(|e| engine.process_event(e).unwrap().alerts).collect();
            (engine, alerts)
        };
        let (a, alerts_a) = run();
        let (b, alerts_b) = run();
        prop_assert_eq!(a, b);
        prop_assert_eq!(alerts_a, alerts_b);
    }

    #[test]
    fn temperature_alerts_carry_calibrated_values(raw in 10.0f64..35.0, offset in -3.0f64..3.0) {
        let mut cfg = config();
        cfg.calibration.insert("cot".into(), cradlewatch_core::calibration::CalibrationProfile {
            device_id: "cot".into(), offset_c: offset, samples: vec![],
        });
        let mut engine = Engine::new(cfg).unwrap();
        let out = engine.process_event(&SensorEvent::new("cot", 1, T0, Reading::TempC(raw))).unwrap();
        let corrected = raw + offset;
        match out.alerts.first() {
            Some(a) => match &a.detail {
                cradlewatch_core::rules::AlertDetail::Temperature { celsius, .. } => prop_assert_eq!(*celsius, corrected),
                d => prop_assert!(false, "unexpected detail {:?}", d),
            },
            None => prop_assert!((20.0..=24.0).contains(&corrected)),
        }
    }
}
