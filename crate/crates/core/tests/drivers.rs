use std::sync::atomic::AtomicBool;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use physiobus::bus::{Broker, ParameterValue};
use physiobus::clock::ScaledClock;
use physiobus::drivers::{run_ecg_driver, run_ppg_driver, run_replay_driver, EcgSimConfig, PpgSimConfig, DriverError};
use physiobus::msgmodel::{Message, SchemaId};
use physiobus::recorder::{read_log, record};

fn fast_broker() -> Broker {
    Broker::with_clock(Arc::new(ScaledClock::new(20.0)))
}

fn run_for(broker: &Broker, bus_s: f64) {
    let clock = broker.clock();
    clock.sleep_until(clock.now_ns() + (bus_s * 1e9) as i64, &AtomicBool::new(false));
}

#[test]
fn ecg_driver_publishes_blocks_truth_and_parameters() {
    let broker = fast_broker();
    let sink = broker.create_node("sink", Vec::new()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _s = sink.subscribe("/humans/physiological/p1/ecg/chest/**", move |d| tx.send(d.clone()).unwrap()).unwrap();
    let cfg = EcgSimConfig { device_clock_offset_ns: 5_000_000_000, ..Default::default() };
    let driver = run_ecg_driver(&broker, "p1", "chest", &cfg, None).unwrap();
    assert_eq!(driver.name(), "ecg_driver_p1_chest");
    run_for(&broker, 3.1);
    drop(driver);

    let params = sink
        .get_parameters("ecg_driver_p1_chest", &["sampling_frequency_hz", "unit", "channel"])
        .ok();
    // The node is gone once its driver stops.
    assert!(params.is_none());

    let mut raw_ts = Vec::new();
    let mut beats = 0;
    for d in rx.try_iter() {
        match d.decode().unwrap() {
            Message::PhysioRaw(raw) => {
                assert_eq!(&*d.topic, "/humans/physiological/p1/ecg/chest/raw");
                assert_eq!(raw.channels[0].channel_name, "ecg_mv");
                assert_eq!(raw.block_len(), 50);
                // Device clock runs 5 s ahead of receipt.
                let lag = d.recv_time_ns - raw.device_timestamp_ns;
                assert!((-5_000_000_000 + 150_000_000..-5_000_000_000 + 400_000_000).contains(&lag), "{lag}");
                raw_ts.push(raw.device_timestamp_ns);
            }
            Message::BeatTruth(_) => beats += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(raw_ts.len() >= 14, "{} blocks", raw_ts.len());
    assert!(raw_ts.windows(2).all(|w| w[1] - w[0] == 200_000_000));
    assert!((3..=5).contains(&beats), "{beats} beats");
}

#[test]
fn driver_parameters_are_queryable() {
    let broker = Broker::new();
    let _d = run_ppg_driver(&broker, "p1", "wrist", &PpgSimConfig::default(), Some("wrist_sensor")).unwrap();
    let sink = broker.create_node("sink", Vec::new()).unwrap();
    let p = sink
        .get_parameters("wrist_sensor", &["sampling_frequency_hz", "unit", "channel", "report_device_features"])
        .unwrap();
    assert_eq!(
        p.into_iter().map(|(_, v)| v).collect::<Vec<_>>(),
        [Some(ParameterValue::Float(250.0)), Some("au".into()), Some("ppg_au".into()), Some(ParameterValue::Bool(true))]
    );
}

#[test]
fn ppg_driver_reports_device_features() {
    let broker = fast_broker();
    let sink = broker.create_node("sink", Vec::new()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _s = sink.subscribe("/humans/physiological/p1/ppg/wrist/device", move |d| tx.send(d.clone()).unwrap()).unwrap();
    let cfg = PpgSimConfig { mean_hr_bpm: 60.0, rr_jitter_sd_ms: 0.0, ..Default::default() };
    let _d = run_ppg_driver(&broker, "p1", "wrist", &cfg, None).unwrap();
    run_for(&broker, 4.0);
    let features: Vec<_> = rx
        .try_iter()
        .map(|d| match d.decode().unwrap() {
            Message::DeviceFeature(f) => (f.name, f.value),
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert!(features.len() >= 4);
    for (name, value) in features {
        match name.as_str() {
            "rr_ms" => assert!((value - 1000.0).abs() < 5.0),
            "heart_rate_bpm" => assert!((value - 60.0).abs() < 2.5),
            other => panic!("unexpected feature {other}"),
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let broker = Broker::new();
    let bad = EcgSimConfig { sampling_frequency_hz: 0.0, ..Default::default() };
    assert!(matches!(run_ecg_driver(&broker, "p1", "c", &bad, None), Err(DriverError::InvalidConfig(_))));
    let bad = EcgSimConfig { block_ms: -1.0, ..Default::default() };
    assert!(matches!(run_ecg_driver(&broker, "p1", "c", &bad, None), Err(DriverError::InvalidConfig(_))));
    assert!(matches!(
        run_ecg_driver(&broker, "P1", "c", &EcgSimConfig::default(), None),
        Err(DriverError::InvalidTopic(_))
    ));
    let parsed: Result<EcgSimConfig, _> = serde_json::from_str(r#"{"mean_hr_bpm": 60, "bogus": 1}"#);
    assert!(parsed.is_err());
}

#[test]
fn replay_driver_republishes_a_log_and_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.log");
    let broker = Broker::new();
    let rec = broker.create_node("recorder", Vec::new()).unwrap();
    let session = record(&rec, &["/**"], &path).unwrap();
    let driver = run_ecg_driver(&broker, "p1", "chest", &EcgSimConfig::default(), None).unwrap();
    std::thread::sleep(Duration::from_millis(1200));
    drop(driver);
    session.stop(broker.now_ns()).unwrap();
    let recorded = read_log(&path).unwrap();
    assert!(recorded.len() >= 5);

    let target = Broker::new();
    let sink = target.create_node("sink", Vec::new()).unwrap();
    let (tx, rx) = mpsc::channel();
    let _s = sink.subscribe("/**", move |d| tx.send(d.clone()).unwrap()).unwrap();
    let player = run_replay_driver(&target, &path, 4.0, None).unwrap();
    std::thread::sleep(Duration::from_millis(600));
    assert!(player.is_finished());
    let got: Vec<_> = rx.try_iter().collect();
    assert_eq!(got.len(), recorded.len());
    assert!(got.iter().zip(&recorded).all(|(d, r)| *d.envelope == r.payload[..]));
    assert!(got.iter().any(|d| d.schema_id() == Some(SchemaId::PhysioRaw)));

    assert!(run_replay_driver(&target, dir.path().join("nope.log"), 1.0, Some("r2")).is_err());
}
