//! Receiver-side playout (jitter) buffer.
//!
//! Packets are keyed by extended sequence number and released once their due
//! time, the sender timestamp mapped onto the local clock plus the playout
//! delay, has passed. Release order is strictly increasing.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;

use crate::wire::RtpPacket;

pub const DEFAULT_CAPACITY: usize = 256;
pub const DEFAULT_JITTER_FACTOR: f64 = 4.0;
/// A forward jump larger than this many packets starts a new talk-spurt.
pub const TALKSPURT_GAP: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayoutMode {
    Fixed,
    Adaptive,
}

/// `playout.*` configuration keys.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct PlayoutConfig {
    pub mode: PlayoutMode,
    pub base_delay_ms: f64,
    pub jitter_factor: f64,
    pub capacity: usize,
}

impl Default for PlayoutConfig {
    fn default() -> Self {
        Self {
            mode: PlayoutMode::Adaptive,
            base_delay_ms: 20.0,
            jitter_factor: DEFAULT_JITTER_FACTOR,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl PlayoutConfig {
    /// Command channel default: fixed 30 ms.
    pub fn command() -> Self {
        Self {
            mode: PlayoutMode::Fixed,
            base_delay_ms: 30.0,
            ..Self::default()
        }
    }

    pub fn base_delay(&self) -> Duration {
        Duration::from_secs_f64(self.base_delay_ms.max(0.0) / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    Buffered,
    Duplicate,
    Late,
    /// The buffer was full: the oldest entry is handed back for immediate
    /// release and the new packet is buffered.
    Overflow(Released),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Released {
    pub packet: RtpPacket,
    pub ext_seq: u64,
    pub arrival: Duration,
    pub due: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlayoutStats {
    pub late_drops: u64,
    pub duplicates: u64,
    pub playout_losses: u64,
    pub overflows: u64,
    pub current_delay: Duration,
}

#[derive(Debug, Clone)]
struct Entry {
    packet: RtpPacket,
    arrival: Duration,
    due: Duration,
}

#[derive(Debug, Clone)]
pub struct PlayoutBuffer {
    config: PlayoutConfig,
    clock_rate: u32,
    entries: BTreeMap<u64, Entry>,
    /// (sender timestamp, local time) pair defining the clock mapping.
    anchor: Option<(u32, Duration)>,
    highest: Option<u64>,
    next_release: Option<u64>,
    delay: Duration,
    late_drops: u64,
    duplicates: u64,
    playout_losses: u64,
    overflows: u64,
}

impl PlayoutBuffer {
    pub fn new(config: PlayoutConfig, clock_rate: u32) -> Self {
        Self {
            config,
            clock_rate,
            entries: BTreeMap::new(),
            anchor: None,
            highest: None,
            next_release: None,
            delay: config.base_delay(),
            late_drops: 0,
            duplicates: 0,
            playout_losses: 0,
            overflows: 0,
        }
    }

    /// Pins the sender clock to local time. Used where sender and receiver
    /// share a clock; otherwise the first arrival becomes the anchor.
    pub fn set_clock_anchor(&mut self, rtp_ts: u32, local: Duration) {
        self.anchor = Some((rtp_ts, local));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn current_delay(&self) -> Duration {
        self.delay
    }

    /// Local time at which a packet with timestamp `rtp_ts` is due.
    pub fn due_time(&self, rtp_ts: u32) -> Option<Duration> {
        let (ts0, t0) = self.anchor?;
        let offset_ticks = rtp_ts.wrapping_sub(ts0) as i32 as f64;
        let local = t0.as_secs_f64() + offset_ticks / self.clock_rate as f64 + self.delay.as_secs_f64();
        Some(Duration::from_secs_f64(local.max(0.0)))
    }

    fn extend(&self, seq: u16) -> u64 {
        match self.highest {
            None => (1 << 16) + seq as u64,
            Some(hi) => {
                let delta = seq.wrapping_sub(hi as u16) as i16 as i64;
                (hi as i64 + delta).max(0) as u64
            }
        }
    }

    /// `jitter_estimate` is in media-clock ticks.
    pub fn insert(&mut self, pkt: RtpPacket, arrival: Duration, jitter_estimate: f64) -> InsertOutcome {
        let ext = self.extend(pkt.sequence);
        if self.anchor.is_none() {
            self.anchor = Some((pkt.timestamp, arrival));
        }

        let spurt_start = match self.highest {
            None => true,
            Some(hi) => ext > hi + TALKSPURT_GAP,
        };
        if self.config.mode == PlayoutMode::Adaptive && (spurt_start || self.entries.is_empty()) {
            let jitter = jitter_estimate.max(0.0) / self.clock_rate as f64;
            self.delay = self.config.base_delay() + Duration::from_secs_f64(self.config.jitter_factor * jitter);
        }

        if self.entries.contains_key(&ext) {
            self.duplicates += 1;
            return InsertOutcome::Duplicate;
        }
        if self.next_release.is_some_and(|next| ext < next) {
            self.late_drops += 1;
            return InsertOutcome::Late;
        }
        let due = self.due_time(pkt.timestamp).unwrap_or(arrival);
        if due < arrival {
            self.late_drops += 1;
            return InsertOutcome::Late;
        }

        self.highest = Some(self.highest.map_or(ext, |hi| hi.max(ext)));
        self.entries.insert(
            ext,
            Entry {
                packet: pkt,
                arrival,
                due,
            },
        );

        if self.entries.len() > self.config.capacity {
            self.overflows += 1;
            let (oldest, entry) = self.entries.pop_first().expect("non-empty");
            self.advance_to(oldest);
            return InsertOutcome::Overflow(Released {
                packet: entry.packet,
                ext_seq: oldest,
                arrival: entry.arrival,
                due: entry.due,
            });
        }
        InsertOutcome::Buffered
    }

    fn advance_to(&mut self, ext: u64) {
        if let Some(next) = self.next_release {
            self.playout_losses += ext.saturating_sub(next);
        }
        self.next_release = Some(ext + 1);
    }

    /// Releases every due packet in sequence order, skipping over gaps whose
    /// successors are already due.
    pub fn poll_due(&mut self, now: Duration) -> Vec<Released> {
        let mut out = Vec::new();
        while let Some(entry) = self.entries.first_entry() {
            if entry.get().due > now {
                break;
            }
            let ext = *entry.key();
            let e = entry.remove();
            self.advance_to(ext);
            out.push(Released {
                packet: e.packet,
                ext_seq: ext,
                arrival: e.arrival,
                due: e.due,
            });
        }
        out
    }

    /// Earliest pending due time, if any.
    pub fn next_due(&self) -> Option<Duration> {
        self.entries.values().next().map(|e| e.due)
    }

    pub fn stats(&self) -> PlayoutStats {
        PlayoutStats {
            late_drops: self.late_drops,
            duplicates: self.duplicates,
            playout_losses: self.playout_losses,
            overflows: self.overflows,
            current_delay: self.delay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    fn pkt(seq: u16, ts: u32) -> RtpPacket {
        RtpPacket::new(96, seq, ts, 1, vec![seq as u8])
    }

    fn fixed(delay_ms: f64) -> PlayoutBuffer {
        let cfg = PlayoutConfig {
            mode: PlayoutMode::Fixed,
            base_delay_ms: delay_ms,
            ..PlayoutConfig::default()
        };
        let mut buf = PlayoutBuffer::new(cfg, 1000);
        buf.set_clock_anchor(0, Duration::ZERO);
        buf
    }

    fn seqs(released: &[Released]) -> Vec<u16> {
        released.iter().map(|r| r.packet.sequence).collect()
    }

    #[test]
    fn reorders_by_sequence() {
        let mut buf = fixed(100.0);
        for seq in [1u16, 3, 2] {
            buf.insert(pkt(seq, seq as u32), ms(40), 0.0);
        }
        assert_eq!(seqs(&buf.poll_due(ms(200))), vec![1, 2, 3]);
    }

    #[test]
    fn fixed_delay_due_time() {
        let mut buf = fixed(100.0);
        buf.insert(pkt(1, 0), ms(50), 0.0);
        assert!(buf.poll_due(ms(99)).is_empty());
        let out = buf.poll_due(ms(100));
        assert_eq!(out[0].due, ms(100));
    }

    #[test]
    fn adaptive_delay_tracks_jitter() {
        let cfg = PlayoutConfig {
            mode: PlayoutMode::Adaptive,
            base_delay_ms: 20.0,
            jitter_factor: 4.0,
            ..PlayoutConfig::default()
        };
        let mut buf = PlayoutBuffer::new(cfg, 1000);
        // 4 ms of jitter at a 1 kHz clock
        buf.insert(pkt(1, 0), ms(43), 4.0);
        assert_eq!(buf.current_delay(), ms(36));
    }

    #[test]
    fn adaptive_delay_holds_within_spurt() {
        let mut buf = PlayoutBuffer::new(PlayoutConfig::default(), 1000);
        buf.insert(pkt(1, 0), ms(0), 0.0);
        buf.insert(pkt(2, 1), ms(1), 50.0);
        assert_eq!(buf.current_delay(), ms(20));
        // gap of more than 10 packets re-evaluates
        buf.insert(pkt(20, 19), ms(19), 5.0);
        assert_eq!(buf.current_delay(), ms(40));
    }

    #[test]
    fn poll_partitions_due_and_future() {
        let mut buf = fixed(10.0);
        assert!(buf.poll_due(ms(1000)).is_empty());
        buf.insert(pkt(1, 0), ms(1), 0.0);
        buf.insert(pkt(2, 5), ms(6), 0.0);
        buf.insert(pkt(3, 50), ms(51), 0.0);
        assert_eq!(seqs(&buf.poll_due(ms(20))), vec![1, 2]);
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn gap_counts_as_playout_loss() {
        let mut buf = fixed(10.0);
        buf.insert(pkt(4, 0), ms(1), 0.0);
        buf.poll_due(ms(10));
        buf.insert(pkt(6, 20), ms(21), 0.0);
        assert_eq!(seqs(&buf.poll_due(ms(30))), vec![6]);
        assert_eq!(buf.stats().playout_losses, 1);
        // seq 5 shows up after its successor was played
        assert_eq!(buf.insert(pkt(5, 10), ms(31), 0.0), InsertOutcome::Late);
        assert_eq!(buf.stats().late_drops, 1);
    }

    #[test]
    fn late_and_duplicate_packets() {
        let mut buf = fixed(10.0);
        assert_eq!(
            buf.stats(),
            PlayoutStats {
                current_delay: ms(10),
                ..Default::default()
            }
        );
        buf.insert(pkt(1, 0), ms(1), 0.0);
        assert_eq!(buf.insert(pkt(1, 0), ms(2), 0.0), InsertOutcome::Duplicate);
        // due at 30 ms, arrives at 31 ms
        assert_eq!(buf.insert(pkt(2, 20), ms(31), 0.0), InsertOutcome::Late);
        let s = buf.stats();
        assert_eq!((s.late_drops, s.duplicates), (1, 1));
    }

    #[test]
    fn overflow_force_releases_oldest() {
        let cfg = PlayoutConfig {
            mode: PlayoutMode::Fixed,
            base_delay_ms: 1000.0,
            capacity: 3,
            ..PlayoutConfig::default()
        };
        let mut buf = PlayoutBuffer::new(cfg, 1000);
        for seq in 1..=3u16 {
            assert_eq!(buf.insert(pkt(seq, 0), ms(0), 0.0), InsertOutcome::Buffered);
        }
        match buf.insert(pkt(4, 0), ms(0), 0.0) {
            InsertOutcome::Overflow(r) => assert_eq!(r.packet.sequence, 1),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(seqs(&buf.poll_due(ms(2000))), vec![2, 3, 4]);
    }

    #[test]
    fn sequence_wrap_keeps_order() {
        let mut buf = fixed(10.0);
        buf.insert(pkt(65535, 0), ms(1), 0.0);
        buf.insert(pkt(0, 1), ms(2), 0.0);
        buf.insert(pkt(1, 2), ms(3), 0.0);
        assert_eq!(seqs(&buf.poll_due(ms(50))), vec![65535, 0, 1]);
    }

    proptest! {
        #[test]
        fn releases_strictly_increasing(
            arrivals in prop::collection::vec((0u16..400, 0u64..200, any::<bool>()), 1..300),
        ) {
            // (seq, extra delay, duplicate?) with 20 ms nominal spacing
            let mut buf = fixed(60.0);
            let mut events: Vec<(u64, u16)> = Vec::new();
            for (seq, extra, dup) in &arrivals {
                let t = *seq as u64 * 20 + extra;
                events.push((t, *seq));
                if *dup {
                    events.push((t + 5, *seq));
                }
            }
            events.sort();
            let mut last: Option<u64> = None;
            for (t, seq) in events {
                buf.insert(pkt(seq, seq as u32 * 20), ms(t), 0.0);
                for r in buf.poll_due(ms(t)) {
                    prop_assert!(last.is_none_or(|l| r.ext_seq > l));
                    last = Some(r.ext_seq);
                }
            }
        }
    }
}
