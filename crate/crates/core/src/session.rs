//! Per-session RTP state: sequence extension, interarrival jitter, loss
//! accounting, sender/receiver report generation, RTCP interval scheduling and
//! membership.
//!
//! All times are [`Duration`]s measured from a session-local origin. Virtual
//! clocks (tests, simulation) and monotonic real clocks use the same type.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::wire::{
    ReportBlock, RtcpPacket, RtpPacket, SdesChunk, SenderInfo, CUMULATIVE_LOST_MAX, CUMULATIVE_LOST_MIN,
};

/// Gain of the interarrival jitter recurrence.
pub const JITTER_GAIN: f64 = 1.0 / 16.0;
pub const SEQ_MOD: u64 = 1 << 16;
/// Forward distance below which a sequence number counts as "newer".
pub const SEQ_WINDOW: u16 = 32768;
/// In-order packets required before a source is considered valid.
pub const MIN_SEQUENTIAL: u8 = 2;
/// Fraction of session bandwidth given to RTCP.
pub const RTCP_BANDWIDTH_FRACTION: f64 = 0.05;
pub const RTCP_MIN_INTERVAL: f64 = 5.0;
pub const RTCP_INITIAL_MIN_INTERVAL: f64 = 2.5;
/// Members unheard for this many deterministic intervals are expired.
pub const MEMBER_TIMEOUT_INTERVALS: u32 = 5;

const NTP_UNIX_OFFSET: u64 = 2_208_988_800;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("no data received from source {0:#010x}")]
    NoDataYet(u32),
    #[error("session has not sent any data")]
    NotASender,
}

/// 64-bit NTP timestamp, 32.32 fixed point seconds since 1900.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct NtpTime(pub u64);

impl NtpTime {
    pub fn from_unix(since_epoch: Duration) -> Self {
        let secs = since_epoch.as_secs() + NTP_UNIX_OFFSET;
        let frac = ((since_epoch.subsec_nanos() as u64) << 32) / 1_000_000_000;
        NtpTime((secs << 32) | frac)
    }

    pub fn now() -> Self {
        let since = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Self::from_unix(since)
    }

    pub fn seconds(self) -> u32 {
        (self.0 >> 32) as u32
    }

    pub fn fraction(self) -> u32 {
        self.0 as u32
    }

    /// The middle 32 bits, as echoed in the LSR field.
    pub fn middle(self) -> u32 {
        (self.0 >> 16) as u32
    }

    pub fn offset(self, d: Duration) -> Self {
        let frac = ((d.subsec_nanos() as u64) << 32) / 1_000_000_000;
        NtpTime(self.0.wrapping_add((d.as_secs() << 32) + frac))
    }
}

/// Converts a duration to 1/65536 s units.
pub fn to_ntp_short(d: Duration) -> u32 {
    ((d.as_nanos() << 16) / 1_000_000_000) as u32
}

pub fn from_ntp_short(units: u32) -> Duration {
    Duration::from_nanos(((units as u128 * 1_000_000_000) >> 16) as u64)
}

/// Media-clock ticks elapsed over `d` at `clock_rate` Hz, fractional part kept.
pub fn ticks(d: Duration, clock_rate: u32) -> f64 {
    // exact for whole-tick durations below 2^53 ns
    d.as_nanos() as f64 * clock_rate as f64 / 1e9
}

/// Whole media-clock ticks elapsed over `d`.
pub fn whole_ticks(d: Duration, clock_rate: u32) -> u64 {
    (d.as_nanos() * clock_rate as u128 / 1_000_000_000) as u64
}

/// Smoothed mean deviation of transit-time differences, in timestamp ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JitterEstimator {
    value: f64,
}

impl JitterEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one transit difference `d`.
    pub fn update(&mut self, d: f64) -> f64 {
        self.value += (d.abs() - self.value) * JITTER_GAIN;
        self.value
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Outcome of feeding one data packet to a [`SourceState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    /// Source not yet validated; packet not counted.
    Probation,
    /// Advanced (or started) the highest sequence number.
    InOrder,
    /// Duplicate or older than the highest sequence seen.
    Late,
}

/// Receiver-side statistics for one synchronization source.
#[derive(Debug, Clone)]
pub struct SourceState {
    pub ssrc: u32,
    clock_rate: u32,
    probation: u8,
    started: bool,
    base_seq: u16,
    max_seq: u16,
    cycles: u64,
    packets_received: u64,
    expected_prior: u64,
    received_prior: u64,
    jitter: JitterEstimator,
    last_arrival_ticks: Option<f64>,
    last_rtp_ts: u32,
    last_sr_ntp: u32,
    last_sr_arrival: Option<Duration>,
}

/// Immutable snapshot of a [`SourceState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceStats {
    pub ssrc: u32,
    pub extended_max: u64,
    pub expected: u64,
    pub received: u64,
    pub cumulative_lost: i64,
    pub jitter_ticks: f64,
    pub jitter: Duration,
}

impl SourceState {
    pub fn new(ssrc: u32, clock_rate: u32) -> Self {
        Self {
            ssrc,
            clock_rate,
            probation: MIN_SEQUENTIAL,
            started: false,
            base_seq: 0,
            max_seq: 0,
            cycles: 0,
            packets_received: 0,
            expected_prior: 0,
            received_prior: 0,
            jitter: JitterEstimator::new(),
            last_arrival_ticks: None,
            last_rtp_ts: 0,
            last_sr_ntp: 0,
            last_sr_arrival: None,
        }
    }

    /// Accept the first packet without the probation period.
    pub fn without_probation(mut self) -> Self {
        self.probation = 0;
        self
    }

    pub fn clock_rate(&self) -> u32 {
        self.clock_rate
    }

    pub fn is_valid(&self) -> bool {
        self.started && self.probation == 0
    }

    pub fn extended_max(&self) -> u64 {
        self.cycles * SEQ_MOD + self.max_seq as u64
    }

    pub fn base_seq(&self) -> u16 {
        self.base_seq
    }

    pub fn packets_received(&self) -> u64 {
        self.packets_received
    }

    pub fn expected(&self) -> u64 {
        if self.is_valid() {
            self.extended_max() - self.base_seq as u64 + 1
        } else {
            0
        }
    }

    pub fn jitter_ticks(&self) -> f64 {
        self.jitter.value()
    }

    pub fn jitter(&self) -> Duration {
        Duration::from_secs_f64(self.jitter.value() / self.clock_rate as f64)
    }

    fn init_seq(&mut self, seq: u16) {
        self.base_seq = seq;
        self.max_seq = seq;
        self.cycles = 0;
        self.packets_received = 0;
        self.expected_prior = 0;
        self.received_prior = 0;
    }

    pub fn on_receive_data(&mut self, seq: u16, rtp_ts: u32, arrival: Duration) -> Reception {
        let arrival_ticks = ticks(arrival, self.clock_rate);
        let outcome = self.update_seq(seq);
        if outcome != Reception::Probation {
            if let Some(prev) = self.last_arrival_ticks {
                let ts_delta = rtp_ts.wrapping_sub(self.last_rtp_ts) as i32 as f64;
                self.jitter.update((arrival_ticks - prev) - ts_delta);
            }
        }
        self.last_arrival_ticks = Some(arrival_ticks);
        self.last_rtp_ts = rtp_ts;
        outcome
    }

    fn update_seq(&mut self, seq: u16) -> Reception {
        if !self.started {
            self.started = true;
            if self.probation == 0 {
                self.init_seq(seq);
                self.packets_received = 1;
                return Reception::InOrder;
            }
            self.max_seq = seq.wrapping_sub(1);
        }

        if self.probation > 0 {
            if seq == self.max_seq.wrapping_add(1) {
                self.probation -= 1;
                self.max_seq = seq;
                if self.probation == 0 {
                    self.init_seq(seq);
                    self.packets_received = 1;
                    return Reception::InOrder;
                }
            } else {
                self.probation = MIN_SEQUENTIAL - 1;
                self.max_seq = seq;
            }
            return Reception::Probation;
        }

        self.packets_received += 1;
        let delta = seq.wrapping_sub(self.max_seq);
        if delta != 0 && delta < SEQ_WINDOW {
            if seq < self.max_seq {
                self.cycles += 1;
            }
            self.max_seq = seq;
            Reception::InOrder
        } else {
            Reception::Late
        }
    }

    /// Record arrival of a sender report from this source.
    pub fn on_sender_report(&mut self, ntp: NtpTime, arrival: Duration) {
        self.last_sr_ntp = ntp.middle();
        self.last_sr_arrival = Some(arrival);
    }

    pub fn stats(&self) -> SourceStats {
        let expected = self.expected();
        SourceStats {
            ssrc: self.ssrc,
            extended_max: self.extended_max(),
            expected,
            received: self.packets_received,
            cumulative_lost: expected as i64 - self.packets_received as i64,
            jitter_ticks: self.jitter.value(),
            jitter: self.jitter(),
        }
    }

    /// Builds a reception report block and starts a new reporting interval.
    pub fn make_receiver_report(&mut self, now: Duration) -> Result<ReportBlock, SessionError> {
        if !self.is_valid() {
            return Err(SessionError::NoDataYet(self.ssrc));
        }
        let expected = self.expected();
        let lost = expected as i64 - self.packets_received as i64;
        let cumulative_lost = lost.clamp(CUMULATIVE_LOST_MIN as i64, CUMULATIVE_LOST_MAX as i64) as i32;

        let expected_interval = expected as i64 - self.expected_prior as i64;
        let received_interval = self.packets_received as i64 - self.received_prior as i64;
        let lost_interval = expected_interval - received_interval;
        self.expected_prior = expected;
        self.received_prior = self.packets_received;
        let fraction_lost = if expected_interval <= 0 || lost_interval <= 0 {
            0
        } else {
            ((lost_interval << 8) / expected_interval).min(255) as u8
        };

        let (last_sr, delay_since_last_sr) = match self.last_sr_arrival {
            Some(at) => (self.last_sr_ntp, to_ntp_short(now.saturating_sub(at))),
            None => (0, 0),
        };

        Ok(ReportBlock {
            source_ssrc: self.ssrc,
            fraction_lost,
            cumulative_lost,
            extended_highest_seq: self.extended_max() as u32,
            interarrival_jitter: self.jitter.value() as u32,
            last_sr,
            delay_since_last_sr,
        })
    }
}

/// Sending half of a session: sequence numbering, media clock and counters.
#[derive(Debug, Clone)]
pub struct SenderState {
    pub ssrc: u32,
    pub payload_type: u8,
    clock_rate: u32,
    next_seq: u16,
    initial_ts: u32,
    packets_sent: u32,
    octets_sent: u32,
}

impl SenderState {
    pub fn new(ssrc: u32, payload_type: u8, clock_rate: u32, initial_seq: u16, initial_ts: u32) -> Self {
        Self {
            ssrc,
            payload_type,
            clock_rate,
            next_seq: initial_seq,
            initial_ts,
            packets_sent: 0,
            octets_sent: 0,
        }
    }

    pub fn clock_rate(&self) -> u32 {
        self.clock_rate
    }

    pub fn initial_timestamp(&self) -> u32 {
        self.initial_ts
    }

    pub fn next_sequence(&self) -> u16 {
        self.next_seq
    }

    pub fn packets_sent(&self) -> u32 {
        self.packets_sent
    }

    pub fn octets_sent(&self) -> u32 {
        self.octets_sent
    }

    /// Media timestamp for a point `elapsed` after the stream origin.
    pub fn timestamp_at(&self, elapsed: Duration) -> u32 {
        self.initial_ts
            .wrapping_add(whole_ticks(elapsed, self.clock_rate) as u32)
    }

    pub fn packetize(&mut self, payload: Vec<u8>, marker: bool, elapsed: Duration) -> RtpPacket {
        let mut pkt = RtpPacket::new(
            self.payload_type,
            self.next_seq,
            self.timestamp_at(elapsed),
            self.ssrc,
            payload,
        );
        pkt.marker = marker;
        self.next_seq = self.next_seq.wrapping_add(1);
        self.packets_sent = self.packets_sent.wrapping_add(1);
        self.octets_sent = self.octets_sent.wrapping_add(pkt.payload.len() as u32);
        pkt
    }

    pub fn sender_report(&self, wall: NtpTime, elapsed: Duration) -> Result<RtcpPacket, SessionError> {
        make_sender_report(
            self.ssrc,
            self.packets_sent,
            self.octets_sent,
            wall,
            self.timestamp_at(elapsed),
        )
    }
}

/// Builds an SR pairing wall-clock time with the media clock.
pub fn make_sender_report(
    ssrc: u32,
    sent_packets: u32,
    sent_octets: u32,
    now: NtpTime,
    media_clock: u32,
) -> Result<RtcpPacket, SessionError> {
    if sent_packets == 0 {
        return Err(SessionError::NotASender);
    }
    Ok(RtcpPacket::SenderReport {
        ssrc,
        info: SenderInfo {
            ntp_seconds: now.seconds(),
            ntp_fraction: now.fraction(),
            rtp_timestamp: media_clock,
            packet_count: sent_packets,
            octet_count: sent_octets,
        },
        reports: Vec::new(),
    })
}

/// Deterministic RTCP interval in seconds.
pub fn rtcp_interval_deterministic(members: usize, rtcp_bandwidth: f64, avg_pkt_size: f64, is_initial: bool) -> f64 {
    let t_min = if is_initial {
        RTCP_INITIAL_MIN_INTERVAL
    } else {
        RTCP_MIN_INTERVAL
    };
    let t = members.max(1) as f64 * avg_pkt_size * 8.0 / rtcp_bandwidth;
    t.max(t_min)
}

/// RTCP transmission interval, randomized uniformly over [0.5 T, 1.5 T].
pub fn rtcp_interval<R: Rng + ?Sized>(
    members: usize,
    rtcp_bandwidth: f64,
    avg_pkt_size: f64,
    is_initial: bool,
    rng: &mut R,
) -> Duration {
    let t = rtcp_interval_deterministic(members, rtcp_bandwidth, avg_pkt_size, is_initial);
    Duration::from_secs_f64(t * rng.random_range(0.5..=1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberEvent {
    Data,
    Report,
    Bye,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Membership {
    members: BTreeMap<u32, Duration>,
    senders: BTreeSet<u32>,
}

impl Membership {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, ssrc: u32, event: MemberEvent, now: Duration) {
        match event {
            MemberEvent::Data => {
                self.members.insert(ssrc, now);
                self.senders.insert(ssrc);
            }
            MemberEvent::Report => {
                self.members.insert(ssrc, now);
            }
            MemberEvent::Bye => {
                self.members.remove(&ssrc);
                self.senders.remove(&ssrc);
            }
        }
    }

    /// Expires members not heard from for [`MEMBER_TIMEOUT_INTERVALS`] intervals.
    pub fn sweep(&mut self, now: Duration, interval: Duration) -> Vec<u32> {
        let timeout = interval * MEMBER_TIMEOUT_INTERVALS;
        let expired: Vec<u32> = self
            .members
            .iter()
            .filter(|(_, &last)| now.saturating_sub(last) > timeout)
            .map(|(&ssrc, _)| ssrc)
            .collect();
        for ssrc in &expired {
            self.members.remove(ssrc);
            self.senders.remove(ssrc);
        }
        expired
    }

    /// Starts a new reporting interval: nobody has sent in it yet.
    pub fn clear_senders(&mut self) {
        self.senders.clear();
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sender_count(&self) -> usize {
        self.senders.len()
    }

    pub fn contains(&self, ssrc: u32) -> bool {
        self.members.contains_key(&ssrc)
    }

    pub fn is_sender(&self, ssrc: u32) -> bool {
        self.senders.contains(&ssrc)
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub ssrc: u32,
    pub payload_type: u8,
    pub clock_rate: u32,
    /// Declared session bandwidth; RTCP gets [`RTCP_BANDWIDTH_FRACTION`] of it.
    pub session_bandwidth: f64,
    pub cname: String,
    pub probation: bool,
}

/// One RTP session endpoint: a local sender plus any number of remote sources.
///
/// Single-writer: every mutation happens on the owning event loop.
#[derive(Debug)]
pub struct RtpSession {
    config: SessionConfig,
    sender: SenderState,
    sources: BTreeMap<u32, SourceState>,
    members: Membership,
    rng: ChaCha8Rng,
    wall_origin: NtpTime,
    next_rtcp_at: Duration,
    avg_rtcp_size: f64,
    initial: bool,
    we_sent: bool,
    rtt: Option<Duration>,
    last_remote_report: Option<ReportBlock>,
}

impl RtpSession {
    pub fn new(config: SessionConfig, seed: u64, wall_origin: NtpTime) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sender = SenderState::new(
            config.ssrc,
            config.payload_type,
            config.clock_rate,
            rng.random(),
            rng.random(),
        );
        let mut members = Membership::new();
        members.update(config.ssrc, MemberEvent::Report, Duration::ZERO);
        let mut session = Self {
            config,
            sender,
            sources: BTreeMap::new(),
            members,
            rng,
            wall_origin,
            next_rtcp_at: Duration::ZERO,
            avg_rtcp_size: 100.0,
            initial: true,
            we_sent: false,
            rtt: None,
            last_remote_report: None,
        };
        session.next_rtcp_at = session.draw_interval();
        session
    }

    pub fn ssrc(&self) -> u32 {
        self.config.ssrc
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn sender(&self) -> &SenderState {
        &self.sender
    }

    pub fn members(&self) -> &Membership {
        &self.members
    }

    pub fn source(&self, ssrc: u32) -> Option<&SourceState> {
        self.sources.get(&ssrc)
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceState> {
        self.sources.values()
    }

    /// Round-trip time derived from the last report block about our stream.
    pub fn rtt(&self) -> Option<Duration> {
        self.rtt
    }

    /// Latest report block a remote receiver sent about our stream.
    pub fn remote_report(&self) -> Option<&ReportBlock> {
        self.last_remote_report.as_ref()
    }

    pub fn wall_clock(&self, now: Duration) -> NtpTime {
        self.wall_origin.offset(now)
    }

    pub fn rtcp_bandwidth(&self) -> f64 {
        self.config.session_bandwidth * RTCP_BANDWIDTH_FRACTION
    }

    fn deterministic_interval(&self) -> Duration {
        Duration::from_secs_f64(rtcp_interval_deterministic(
            self.members.len(),
            self.rtcp_bandwidth(),
            self.avg_rtcp_size,
            self.initial,
        ))
    }

    fn draw_interval(&mut self) -> Duration {
        rtcp_interval(
            self.members.len(),
            self.rtcp_bandwidth(),
            self.avg_rtcp_size,
            self.initial,
            &mut self.rng,
        )
    }

    pub fn send(&mut self, payload: Vec<u8>, marker: bool, now: Duration) -> RtpPacket {
        self.we_sent = true;
        self.members.update(self.config.ssrc, MemberEvent::Data, now);
        self.sender.packetize(payload, marker, now)
    }

    pub fn receive(&mut self, pkt: &RtpPacket, now: Duration) -> Reception {
        let clock_rate = self.config.clock_rate;
        let probation = self.config.probation;
        let source = self.sources.entry(pkt.ssrc).or_insert_with(|| {
            let s = SourceState::new(pkt.ssrc, clock_rate);
            if probation {
                s
            } else {
                s.without_probation()
            }
        });
        let outcome = source.on_receive_data(pkt.sequence, pkt.timestamp, now);
        if outcome != Reception::Probation {
            self.members.update(pkt.ssrc, MemberEvent::Data, now);
        }
        outcome
    }

    pub fn receive_rtcp(&mut self, pkts: &[RtcpPacket], wire_len: usize, now: Duration) {
        self.avg_rtcp_size += (wire_len as f64 - self.avg_rtcp_size) / 16.0;
        for pkt in pkts {
            match pkt {
                RtcpPacket::SenderReport { ssrc, info, reports } => {
                    self.members.update(*ssrc, MemberEvent::Report, now);
                    if let Some(src) = self.sources.get_mut(ssrc) {
                        let ntp = NtpTime(((info.ntp_seconds as u64) << 32) | info.ntp_fraction as u64);
                        src.on_sender_report(ntp, now);
                    }
                    self.absorb_reports(reports, now);
                }
                RtcpPacket::ReceiverReport { ssrc, reports } => {
                    self.members.update(*ssrc, MemberEvent::Report, now);
                    self.absorb_reports(reports, now);
                }
                RtcpPacket::SourceDescription { chunks } => {
                    for chunk in chunks {
                        self.members.update(chunk.ssrc, MemberEvent::Report, now);
                    }
                }
                RtcpPacket::Bye { sources, .. } => {
                    for ssrc in sources {
                        self.members.update(*ssrc, MemberEvent::Bye, now);
                        self.sources.remove(ssrc);
                    }
                }
            }
        }
    }

    fn absorb_reports(&mut self, reports: &[ReportBlock], now: Duration) {
        for block in reports.iter().filter(|b| b.source_ssrc == self.config.ssrc) {
            self.last_remote_report = Some(*block);
            if block.last_sr != 0 {
                let arrival = self.wall_clock(now).middle();
                let rtt = arrival
                    .wrapping_sub(block.last_sr)
                    .wrapping_sub(block.delay_since_last_sr);
                // a negative result wraps to a huge value; ignore it
                if rtt < 1 << 31 {
                    self.rtt = Some(from_ntp_short(rtt));
                }
            }
        }
    }

    pub fn rtcp_due(&self, now: Duration) -> bool {
        now >= self.next_rtcp_at
    }

    pub fn next_rtcp_at(&self) -> Duration {
        self.next_rtcp_at
    }

    /// Builds the compound report (SR or RR, then SDES) for the current state.
    pub fn build_report(&mut self, now: Duration) -> Vec<RtcpPacket> {
        let reports: Vec<ReportBlock> = self
            .sources
            .values_mut()
            .filter_map(|s| s.make_receiver_report(now).ok())
            .take(31)
            .collect();
        let head = match self.sender.sender_report(self.wall_origin.offset(now), now) {
            Ok(RtcpPacket::SenderReport { ssrc, info, .. }) if self.we_sent => {
                RtcpPacket::SenderReport { ssrc, info, reports }
            }
            _ => RtcpPacket::ReceiverReport {
                ssrc: self.config.ssrc,
                reports,
            },
        };
        vec![
            head,
            RtcpPacket::SourceDescription {
                chunks: vec![SdesChunk {
                    ssrc: self.config.ssrc,
                    cname: Some(self.config.cname.clone()),
                }],
            },
        ]
    }

    /// Returns a compound report when the RTCP timer has expired, and
    /// reschedules the timer.
    pub fn poll_rtcp(&mut self, now: Duration) -> Option<Vec<RtcpPacket>> {
        if !self.rtcp_due(now) {
            return None;
        }
        let report = self.build_report(now);
        self.we_sent = false;
        self.initial = false;
        let interval = self.deterministic_interval();
        self.members.sweep(now, interval);
        self.members.clear_senders();
        self.next_rtcp_at = now + self.draw_interval();
        Some(report)
    }

    /// Records the size of a compound we transmitted.
    pub fn on_rtcp_sent(&mut self, wire_len: usize) {
        self.avg_rtcp_size += (wire_len as f64 - self.avg_rtcp_size) / 16.0;
    }

    pub fn bye(&self) -> Vec<RtcpPacket> {
        vec![
            RtcpPacket::ReceiverReport {
                ssrc: self.config.ssrc,
                reports: Vec::new(),
            },
            RtcpPacket::Bye {
                sources: vec![self.config.ssrc],
                reason: None,
            },
        ]
    }
}
