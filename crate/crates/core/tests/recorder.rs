use std::sync::atomic::AtomicBool;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use physiobus::bus::{Broker, Delivery};
use physiobus::msgmodel::{encode_envelope, BeatTruth, DeviceFeature, HrvFeatures, Message, PhysioRaw, PhysioRawChannel};
use physiobus::recorder::{list_log, read_log, record, replay, LogReader, RecorderError, LOG_MAGIC, OFFSET_KEY_PREFIX};

const RAW: &str = "/humans/physiological/p1/ecg/chest/raw";
const FEATURES: &str = "/humans/physiological/p1/ecg/chest/features";
const EVENTS: &str = "/experiment/events";

fn publish_session(broker: &Broker, count: usize, gap: Duration) -> Vec<(String, Vec<u8>)> {
    let node = broker.create_node("source", vec![("sampling_frequency_hz".into(), 250.0.into())]).unwrap();
    let mut sent = Vec::new();
    for i in 0..count {
        let (topic, msg): (&str, Message) = match i % 3 {
            0 => (
                RAW,
                PhysioRaw {
                    device_timestamp_ns: 2_000_000_000 + i as i64 * 1_000_000,
                    channels: vec![PhysioRawChannel::new("ecg_mv", vec![i as f64; 4])],
                    ..Default::default()
                }
                .into(),
            ),
            1 => (FEATURES, Message::EcgFeatures(HrvFeatures { heart_rate_bpm: 60.0 + i as f64, ..Default::default() })),
            _ => (EVENTS, DeviceFeature { name: format!("mark_{i}"), value: 1.0, ..Default::default() }.into()),
        };
        let mut msg = msg;
        let header = node.publish(topic, msg.clone()).unwrap();
        *msg.header_mut() = header;
        sent.push((topic.to_owned(), encode_envelope(&msg).unwrap()));
        std::thread::sleep(gap);
    }
    sent
}

#[test]
fn recording_keeps_every_message_in_receipt_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.log");
    let broker = Broker::new();
    let rec_node = broker.create_node("recorder", Vec::new()).unwrap();
    let session = record(&rec_node, &[RAW, FEATURES, EVENTS], &path).unwrap();
    let sent = publish_session(&broker, 30, Duration::from_millis(1));
    std::thread::sleep(Duration::from_millis(200));
    let summary = session.stop(broker.now_ns()).unwrap();
    assert_eq!(summary.records, 30);

    let records = read_log(&path).unwrap();
    let got: Vec<_> = records.iter().map(|r| (r.topic.clone(), r.payload.clone())).collect();
    assert_eq!(got, sent);
    assert!(records.windows(2).all(|w| w[0].recv_bus_time_ns <= w[1].recv_bus_time_ns));

    let listing = list_log(&path).unwrap();
    assert_eq!(listing.records, 30);
    assert_eq!(listing.topics.values().map(|t| t.count).sum::<u64>(), 30);
    assert_eq!(listing.topics.keys().collect::<Vec<_>>(), [EVENTS, FEATURES, RAW]);
    assert_eq!(listing, list_log(&path).unwrap());
    // Block-end device time versus receipt: one estimate for the raw stream.
    let offsets: Vec<_> = listing.metadata.iter().filter(|(k, _)| k.starts_with(OFFSET_KEY_PREFIX)).collect();
    assert!(offsets.iter().any(|(k, _)| k == &format!("{OFFSET_KEY_PREFIX}{RAW}")), "{offsets:?}");
}

#[test]
fn replay_reproduces_bytes_order_and_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("session.log");
    let broker = Broker::new();
    let rec_node = broker.create_node("recorder", Vec::new()).unwrap();
    let session = record(&rec_node, &["/humans/**", EVENTS], &path).unwrap();
    publish_session(&broker, 120, Duration::from_millis(3));
    std::thread::sleep(Duration::from_millis(100));
    session.stop(broker.now_ns()).unwrap();
    let recorded = read_log(&path).unwrap();
    assert_eq!(recorded.len(), 120);

    let replay_broker = Broker::new();
    let sink = replay_broker.create_node("sink", Vec::new()).unwrap();
    let (tx, rx) = mpsc::channel::<(Delivery, Instant)>();
    let _s = sink.subscribe("/**", move |d| tx.send((d.clone(), Instant::now())).unwrap()).unwrap();
    let player = replay_broker.create_node("player", Vec::new()).unwrap();
    let stop = AtomicBool::new(false);
    let result = replay(&player, &path, 1.0, &stop).unwrap();
    assert_eq!(result.published, 120);

    let got: Vec<_> = (0..120).map(|_| rx.recv_timeout(Duration::from_secs(5)).unwrap()).collect();
    for (r, (d, _)) in recorded.iter().zip(&got) {
        assert_eq!(&*d.topic, r.topic);
        assert_eq!(&*d.envelope, &r.payload[..]);
    }
    for i in 1..recorded.len() {
        let original = recorded[i].recv_bus_time_ns - recorded[0].recv_bus_time_ns;
        let replayed = (got[i].0.recv_time_ns - got[0].0.recv_time_ns) as i64;
        assert!((original - replayed).abs() <= 10_000_000, "record {i}: {original} vs {replayed}");
    }
}

#[test]
fn faster_replay_compresses_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.log");
    let broker = Broker::new();
    let rec_node = broker.create_node("recorder", Vec::new()).unwrap();
    let session = record(&rec_node, &["/**"], &path).unwrap();
    publish_session(&broker, 6, Duration::from_millis(100));
    std::thread::sleep(Duration::from_millis(100));
    session.stop(broker.now_ns()).unwrap();
    let player = broker.create_node("player", Vec::new()).unwrap();
    let start = Instant::now();
    replay(&player, &path, 5.0, &AtomicBool::new(false)).unwrap();
    assert!(start.elapsed() < Duration::from_millis(300), "{:?}", start.elapsed());
    assert!(matches!(replay(&player, &path, 0.0, &AtomicBool::new(false)), Err(RecorderError::InvalidRate(_))));
}

#[test]
fn empty_session_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.log");
    let broker = Broker::new();
    let node = broker.create_node("recorder", Vec::new()).unwrap();
    record(&node, &["/**"], &path).unwrap().stop(broker.now_ns()).unwrap();
    let s = list_log(&path).unwrap();
    assert_eq!(s.records, 0);
    assert!(s.topics.is_empty());
    assert_eq!(s.span_ns, None);
    assert_eq!(&std::fs::read(&path).unwrap()[..8], LOG_MAGIC);
}

#[test]
fn unwritable_path_fails_without_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing_dir").join("x.log");
    let broker = Broker::new();
    let node = broker.create_node("recorder", Vec::new()).unwrap();
    assert!(matches!(record(&node, &["/**"], &path), Err(RecorderError::Io(_))));
    assert!(!path.exists());
    let bad = dir.path().join("y.log");
    assert!(record(&node, &["no_slash"], &bad).is_err());
    assert!(!bad.exists());
}

fn two_topic_log(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("ten.log");
    let broker = Broker::new();
    let rec = broker.create_node("recorder", Vec::new()).unwrap();
    let session = record(&rec, &["/**"], &path).unwrap();
    let node = broker.create_node("src", Vec::new()).unwrap();
    for i in 0..10 {
        let topic = if i % 2 == 0 { FEATURES } else { "/humans/physiological/p1/ecg/chest/truth" };
        if i % 2 == 0 {
            node.publish(topic, Message::EcgFeatures(HrvFeatures::default())).unwrap();
        } else {
            node.publish(topic, BeatTruth { beat_time_ns: i, ..Default::default() }).unwrap();
        }
    }
    std::thread::sleep(Duration::from_millis(100));
    session.stop(broker.now_ns()).unwrap();
    path
}

#[test]
fn truncated_log_reports_intact_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let path = two_topic_log(dir.path());
    let summary = list_log(&path).unwrap();
    assert_eq!(summary.topics.len(), 2);
    assert_eq!(summary.topics.values().map(|t| t.count).sum::<u64>(), 10);

    let bytes = std::fs::read(&path).unwrap();
    // Find where record 7 starts, then cut 5 bytes into it.
    let mut reader = LogReader::new(&bytes[..]).unwrap();
    let mut offset = bytes.len() - {
        let mut rest = 0;
        let mut lens = Vec::new();
        while let Some(r) = reader.next_record().unwrap() {
            lens.push(r.encoded_len());
        }
        for l in &lens[7..] {
            rest += l;
        }
        rest
    };
    offset += 5;
    let cut = dir.path().join("cut.log");
    std::fs::write(&cut, &bytes[..offset]).unwrap();
    match list_log(&cut) {
        Err(RecorderError::Truncated { intact_records, .. }) => assert_eq!(intact_records, 7),
        other => panic!("expected truncation, got {other:?}"),
    }
    assert!(matches!(replay(&Broker::new().create_node("p", Vec::new()).unwrap(), &cut, 1.0, &AtomicBool::new(false)),
        Err(RecorderError::Truncated { intact_records: 7, .. })));

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    let bad = dir.path().join("bad.log");
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(list_log(&bad), Err(RecorderError::LogFormat { offset: 0, .. })));
}
