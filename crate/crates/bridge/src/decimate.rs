//! Rate limiting of raw-sample streams towards one client subscription.

use std::collections::HashMap;

/// Most raw messages per second forwarded per topic and subscription.
pub const RAW_MAX_RATE_HZ: f64 = 50.0;

const MIN_GAP_NS: i64 = (1e9 / RAW_MAX_RATE_HZ) as i64;

#[derive(Debug, Default)]
struct Slot {
    last_sent_ns: Option<i64>,
    pending: Option<String>,
}

/// Forwards at most one message per topic every 20 ms. A message arriving
/// too early waits as the pending one; a newer message replaces it and the
/// replaced one counts as dropped.
#[derive(Debug, Default)]
pub struct Decimator {
    slots: HashMap<String, Slot>,
    dropped: u64,
}

impl Decimator {
    /// Returns the message if it may go out now.
    pub fn offer(&mut self, topic: &str, now_ns: i64, text: String) -> Option<String> {
        let slot = self.slots.entry(topic.to_owned()).or_default();
        if slot.pending.is_none() && slot.last_sent_ns.is_none_or(|t| now_ns - t >= MIN_GAP_NS) {
            slot.last_sent_ns = Some(now_ns);
            return Some(text);
        }
        if slot.pending.replace(text).is_some() {
            self.dropped += 1;
        }
        None
    }

    /// Pending messages whose slot has opened.
    pub fn due(&mut self, now_ns: i64) -> Vec<String> {
        let mut out = Vec::new();
        for slot in self.slots.values_mut() {
            if slot.pending.is_some() && slot.last_sent_ns.is_none_or(|t| now_ns - t >= MIN_GAP_NS) {
                slot.last_sent_ns = Some(now_ns);
                out.extend(slot.pending.take());
            }
        }
        out
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: i64 = 1_000_000;

    #[test]
    fn keeps_newest_and_counts_drops() {
        let mut d = Decimator::default();
        assert_eq!(d.offer("a", 0, "0".into()), Some("0".into()));
        assert_eq!(d.offer("a", 5 * MS, "1".into()), None);
        assert_eq!(d.offer("a", 10 * MS, "2".into()), None);
        assert_eq!(d.dropped(), 1);
        assert!(d.due(15 * MS).is_empty());
        assert_eq!(d.due(20 * MS), vec!["2".to_owned()]);
        // Other topics are independent.
        assert_eq!(d.offer("b", 21 * MS, "b".into()), Some("b".into()));
    }

    #[test]
    fn rate_is_bounded() {
        let mut d = Decimator::default();
        let mut sent = 0;
        // 1000 messages per second for one second, polled every 5 ms.
        for ms in 0..1000 {
            if d.offer("raw", ms * MS, ms.to_string()).is_some() {
                sent += 1;
            }
            if ms % 5 == 0 {
                sent += d.due(ms * MS).len();
            }
        }
        assert!(sent <= 51, "{sent}");
        assert!(sent >= 45, "{sent}");
        assert_eq!(sent as u64 + d.dropped() + d.slots["raw"].pending.is_some() as u64, 1000);
    }
}
