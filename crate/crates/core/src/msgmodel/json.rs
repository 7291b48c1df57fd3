//! JSON view of messages, shared by `echo` and the WebSocket bridge.
//!
//! Integers are emitted as JSON integers and floats use the shortest
//! representation that round-trips to the same binary64 value.

use serde_json::{json, Map, Value};

use super::{Header, HrvFeatures, Message};

fn header(h: &Header) -> Value {
    json!({ "seq": h.seq, "stamp_ns": h.stamp_ns, "source": h.source })
}

fn hrv(m: &HrvFeatures) -> Value {
    json!({
        "header": header(&m.header),
        "device_timestamp_ns": m.device_timestamp_ns,
        "rr_ms": m.rr_ms,
        "peak_count": m.peak_count,
        "sdnn_ms": m.sdnn_ms,
        "rmssd_ms": m.rmssd_ms,
        "pnn50_pct": m.pnn50_pct,
        "heart_rate_bpm": m.heart_rate_bpm,
        "window_s": m.window_s,
    })
}

/// The `data` object for one message.
pub fn message_to_json(msg: &Message) -> Value {
    match msg {
        Message::PhysioRaw(m) => json!({
            "header": header(&m.header),
            "device_timestamp_ns": m.device_timestamp_ns,
            "channels": m.channels.iter().map(|c| json!({
                "channel_name": c.channel_name,
                "samples": c.samples,
            })).collect::<Vec<_>>(),
        }),
        Message::DeviceFeature(m) => json!({
            "header": header(&m.header),
            "device_timestamp_ns": m.device_timestamp_ns,
            "name": m.name,
            "value": m.value,
        }),
        Message::EcgFeatures(m) | Message::PpgFeatures(m) => hrv(m),
        Message::ExpressionEvent(m) => json!({
            "header": header(&m.header),
            "human_id": m.human_id,
            "expression": m.expression.as_str(),
            "confidence": m.confidence,
        }),
        Message::AffectiveState(m) => json!({
            "header": header(&m.header),
            "human_id": m.human_id,
            "state": m.state.as_str(),
            "heart_rate_bpm": m.heart_rate_bpm,
            "expression": m.expression.as_str(),
        }),
        Message::BeatTruth(m) => json!({
            "header": header(&m.header),
            "beat_time_ns": m.beat_time_ns,
        }),
    }
}

/// A delivered message as one JSON object:
/// `{"topic", "schema", "bus_time_ns", "data"}`.
pub fn delivery_to_json(topic: &str, bus_time_ns: i64, msg: &Message) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("topic".into(), topic.into());
    obj.insert("schema".into(), msg.schema_id().name().into());
    obj.insert("bus_time_ns".into(), bus_time_ns.into());
    obj.insert("data".into(), message_to_json(msg));
    obj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgmodel::{HrvFeatures, Message};

    #[test]
    fn features_keys_and_exact_floats() {
        let m = HrvFeatures {
            header: Header { seq: u64::MAX, stamp_ns: i64::MAX, source: "x".into() },
            heart_rate_bpm: 72.123_456_789_012_34,
            sdnn_ms: 0.1 + 0.2,
            rmssd_ms: 1e-300,
            pnn50_pct: 12.5,
            ..Default::default()
        };
        let v = message_to_json(&Message::EcgFeatures(m.clone()));
        let text = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["heart_rate_bpm"].as_f64().unwrap().to_bits(), m.heart_rate_bpm.to_bits());
        assert_eq!(back["sdnn_ms"].as_f64().unwrap().to_bits(), m.sdnn_ms.to_bits());
        assert_eq!(back["rmssd_ms"].as_f64().unwrap().to_bits(), m.rmssd_ms.to_bits());
        assert_eq!(back["header"]["seq"].as_u64(), Some(u64::MAX));
        assert_eq!(back["header"]["stamp_ns"].as_i64(), Some(i64::MAX));
        for k in ["heart_rate_bpm", "sdnn_ms", "rmssd_ms", "pnn50_pct"] {
            assert!(back.get(k).is_some(), "{k}");
        }
    }
}
