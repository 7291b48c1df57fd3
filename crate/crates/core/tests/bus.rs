use std::sync::mpsc;
use std::time::Duration;

use physiobus::bus::tcp::{connect_tcp, serve_tcp};
use physiobus::bus::{Broker, BusError, Delivery, ParameterValue};
use physiobus::msgmodel::{encode_envelope, DeviceFeature, ExpressionEvent, Expression, HrvFeatures, Message, SchemaId};

const ECG_FEATURES: &str = "/humans/physiological/p1/ecg/chest/features";
const ECG_RAW: &str = "/humans/physiological/p1/ecg/chest/raw";
const PPG_RAW: &str = "/humans/physiological/p2/ppg/wrist/raw";
const WAIT: Duration = Duration::from_secs(5);

fn collector() -> (mpsc::Sender<Delivery>, mpsc::Receiver<Delivery>) {
    mpsc::channel()
}

fn features(hr: f64) -> HrvFeatures {
    HrvFeatures { heart_rate_bpm: hr, window_s: 60.0, ..Default::default() }
}

#[test]
fn local_publish_reaches_exact_and_prefix_subscribers() {
    let broker = Broker::new();
    let publisher = broker.create_node("ecg_interpreter", Vec::new()).unwrap();
    let listener = broker.create_node("listener", Vec::new()).unwrap();
    let (tx_exact, rx_exact) = collector();
    let (tx_prefix, rx_prefix) = collector();
    let _a = listener.subscribe(ECG_FEATURES, move |d| tx_exact.send(d.clone()).unwrap()).unwrap();
    let _b = listener
        .subscribe("/humans/physiological/p1/**", move |d| tx_prefix.send(d.clone()).unwrap())
        .unwrap();

    let header = publisher.publish(ECG_FEATURES, Message::EcgFeatures(features(72.0))).unwrap();
    assert_eq!(header.seq, 0);
    assert_eq!(header.source, "ecg_interpreter");
    publisher.publish(PPG_RAW, physiobus::msgmodel::PhysioRaw::default()).unwrap();

    let d = rx_exact.recv_timeout(WAIT).unwrap();
    assert_eq!(&*d.topic, ECG_FEATURES);
    assert_eq!(&*d.publisher, "ecg_interpreter");
    match d.decode().unwrap() {
        Message::EcgFeatures(f) => assert_eq!(f.heart_rate_bpm, 72.0),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(&*rx_prefix.recv_timeout(WAIT).unwrap().topic, ECG_FEATURES);
    // The p2 topic matches neither subscription.
    assert!(rx_prefix.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn sequence_numbers_count_per_topic() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    let seqs: Vec<u64> = (0..3)
        .map(|_| node.publish(ECG_FEATURES, Message::EcgFeatures(features(70.0))).unwrap().seq)
        .collect();
    assert_eq!(seqs, [0, 1, 2]);
    assert_eq!(node.publish(PPG_RAW, physiobus::msgmodel::PhysioRaw::default()).unwrap().seq, 0);
}

#[test]
fn deliveries_keep_publish_order_and_monotone_receipt_times() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    let (tx, rx) = collector();
    let _s = node.subscribe("/**", move |d| tx.send(d.clone()).unwrap()).unwrap();
    for i in 0..500 {
        let msg = DeviceFeature { name: "i".into(), value: i as f64, ..Default::default() };
        node.publish("/humans/physiological/p1/ppg/w/device", msg).unwrap();
    }
    let mut last = i64::MIN;
    for i in 0..500 {
        let d = rx.recv_timeout(WAIT).unwrap();
        assert!(d.recv_time_ns >= last);
        last = d.recv_time_ns;
        match d.decode().unwrap() {
            Message::DeviceFeature(f) => assert_eq!(f.value, i as f64),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn topic_schema_is_fixed_by_first_publish() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    node.publish(ECG_RAW, physiobus::msgmodel::PhysioRaw::default()).unwrap();
    let err = node.publish(ECG_RAW, DeviceFeature { name: "x".into(), ..Default::default() }).unwrap_err();
    assert!(matches!(err, BusError::SchemaMismatch { existing: SchemaId::PhysioRaw, got: SchemaId::DeviceFeature, .. }));
}

#[test]
fn invalid_topics_patterns_and_names_are_rejected() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    assert!(matches!(
        node.publish("/humans/physiological/p1/xray/a/raw", physiobus::msgmodel::PhysioRaw::default()),
        Err(BusError::InvalidTopic(_))
    ));
    assert!(matches!(node.subscribe("humans/**", |_| {}), Err(BusError::InvalidPattern(_))));
    assert!(matches!(broker.create_node("Bad Name", Vec::new()), Err(BusError::InvalidNodeName(_))));
    assert!(matches!(broker.create_node("n", Vec::new()), Err(BusError::DuplicateNodeName(_))));
}

#[test]
fn node_name_is_released_when_last_handle_drops() {
    let broker = Broker::new();
    let node = broker.create_node("once", Vec::new()).unwrap();
    let clone = node.clone();
    drop(node);
    assert!(broker.create_node("once", Vec::new()).is_err());
    drop(clone);
    broker.create_node("once", Vec::new()).unwrap();
}

#[test]
fn parameters_are_static_and_status_is_separate() {
    let broker = Broker::new();
    let params = vec![("sampling_frequency_hz".to_owned(), ParameterValue::from(250.0))];
    let driver = broker.create_node("driver", params).unwrap();
    let other = broker.create_node("other", Vec::new()).unwrap();
    assert_eq!(other.get_parameter("driver", "sampling_frequency_hz").unwrap(), Some(ParameterValue::Float(250.0)));
    assert_eq!(other.get_parameter("driver", "missing").unwrap(), None);
    driver.set_status("sampling_frequency_hz", 1.0);
    driver.set_status("skipped_ticks", 3i64);
    assert_eq!(other.get_parameter("driver", "sampling_frequency_hz").unwrap(), Some(ParameterValue::Float(250.0)));
    assert_eq!(other.get_parameter("driver", "skipped_ticks").unwrap(), Some(ParameterValue::Int(3)));
    assert!(matches!(other.get_parameter("ghost", "x"), Err(BusError::UnknownNode(_))));
}

#[test]
fn list_topics_reports_each_publisher() {
    let broker = Broker::new();
    let a = broker.create_node("a", Vec::new()).unwrap();
    let b = broker.create_node("b", Vec::new()).unwrap();
    a.publish(ECG_FEATURES, Message::EcgFeatures(features(60.0))).unwrap();
    b.publish(ECG_FEATURES, Message::EcgFeatures(features(61.0))).unwrap();
    a.publish(ECG_RAW, physiobus::msgmodel::PhysioRaw::default()).unwrap();
    let list = a.list_topics().unwrap();
    let summary: Vec<_> = list.iter().map(|t| (t.topic.as_str(), t.publisher.as_str(), t.schema_id)).collect();
    assert_eq!(
        summary,
        [
            (ECG_FEATURES, "a", SchemaId::EcgFeatures),
            (ECG_FEATURES, "b", SchemaId::EcgFeatures),
            (ECG_RAW, "a", SchemaId::PhysioRaw),
        ]
    );
}

#[test]
fn slow_subscriber_drops_oldest_and_counts_it() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    let (gate_tx, gate_rx) = mpsc::channel::<()>();
    let (tx, rx) = collector();
    let _s = node
        .subscribe(ECG_FEATURES, move |d| {
            let _ = gate_rx.recv();
            tx.send(d.clone()).unwrap();
        })
        .unwrap();
    let total = physiobus::bus::QUEUE_SOFT_LIMIT + 500;
    for i in 0..total {
        node.publish(ECG_FEATURES, Message::EcgFeatures(features(i as f64))).unwrap();
    }
    let dropped = node.list_topics().unwrap()[0].dropped;
    assert!(dropped >= 499, "dropped {dropped}");
    drop(gate_tx);
    // The newest message is always kept.
    let mut last = None;
    while let Ok(d) = rx.recv_timeout(Duration::from_millis(500)) {
        last = Some(d);
    }
    match last.unwrap().decode().unwrap() {
        Message::EcgFeatures(f) => assert_eq!(f.heart_rate_bpm, (total - 1) as f64),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unsubscribe_stops_delivery() {
    let broker = Broker::new();
    let node = broker.create_node("n", Vec::new()).unwrap();
    let (tx, rx) = collector();
    let sub = node.subscribe(ECG_FEATURES, move |d| tx.send(d.clone()).unwrap()).unwrap();
    node.publish(ECG_FEATURES, Message::EcgFeatures(features(1.0))).unwrap();
    rx.recv_timeout(WAIT).unwrap();
    sub.unsubscribe();
    node.publish(ECG_FEATURES, Message::EcgFeatures(features(2.0))).unwrap();
    assert!(rx.recv_timeout(Duration::from_millis(200)).is_err());
}

#[test]
fn tcp_nodes_exchange_messages_with_local_nodes() {
    let broker = Broker::new();
    let server = serve_tcp(&broker, "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let local = broker.create_node("local", vec![("role".into(), "sink".into())]).unwrap();
    let remote = connect_tcp(addr, "remote_driver", vec![("sampling_frequency_hz".into(), 250.0.into())]).unwrap();
    let watcher = connect_tcp(addr, "remote_watcher", Vec::new()).unwrap();

    let (tx_local, rx_local) = collector();
    let _a = local.subscribe("/humans/**", move |d| tx_local.send(d.clone()).unwrap()).unwrap();
    let (tx_remote, rx_remote) = collector();
    let _b = watcher.subscribe(ECG_FEATURES, move |d| tx_remote.send(d.clone()).unwrap()).unwrap();
    // Subscriptions travel over the socket; give them a moment to land.
    std::thread::sleep(Duration::from_millis(200));

    let msg = Message::EcgFeatures(features(72.0));
    remote.publish(ECG_FEATURES, msg.clone()).unwrap();
    let got_local = rx_local.recv_timeout(WAIT).unwrap();
    let got_remote = rx_remote.recv_timeout(WAIT).unwrap();
    assert_eq!(&*got_local.publisher, "remote_driver");
    assert_eq!(&*got_remote.publisher, "remote_driver");
    assert_eq!(got_local.envelope, got_remote.envelope);

    let expr = ExpressionEvent {
        header: Default::default(),
        human_id: "p1".into(),
        expression: Expression::Happy,
        confidence: 0.9,
    };
    local.publish("/humans/expressions/p1", expr).unwrap();
    assert_eq!(&*rx_local.recv_timeout(WAIT).unwrap().topic, "/humans/expressions/p1");
    assert!(rx_remote.recv_timeout(Duration::from_millis(200)).is_err());

    assert_eq!(watcher.get_parameter("remote_driver", "sampling_frequency_hz").unwrap(), Some(250.0.into()));
    assert_eq!(watcher.get_parameter("local", "role").unwrap(), Some("sink".into()));
    assert!(matches!(watcher.get_parameter("ghost", "x"), Err(BusError::UnknownNode(_))));
    let topics: Vec<_> = watcher.list_topics().unwrap().into_iter().map(|t| t.topic).collect();
    assert!(topics.contains(&ECG_FEATURES.to_owned()));

    assert!(matches!(connect_tcp(addr, "remote_driver", Vec::new()), Err(BusError::DuplicateNodeName(_))));
    drop(remote);
    // The name is free again once the connection is gone.
    let mut again = None;
    for _ in 0..50 {
        match connect_tcp(addr, "remote_driver", Vec::new()) {
            Ok(n) => {
                again = Some(n);
                break;
            }
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
    assert!(again.is_some());
    server.shutdown();
}

#[test]
fn tcp_broker_rejects_undecodable_envelopes() {
    let broker = Broker::new();
    let server = serve_tcp(&broker, "127.0.0.1:0").unwrap();
    let local = broker.create_node("local", Vec::new()).unwrap();
    let (tx, rx) = collector();
    let _s = local.subscribe("/**", move |d| tx.send(d.clone()).unwrap()).unwrap();
    let remote = connect_tcp(server.local_addr(), "bad", Vec::new()).unwrap();
    let mut bytes = encode_envelope(&Message::EcgFeatures(features(1.0))).unwrap();
    bytes.push(0);
    let _ = remote.publish_envelope(ECG_FEATURES, bytes.into());
    assert!(rx.recv_timeout(Duration::from_millis(300)).is_err());
    server.shutdown();
}
