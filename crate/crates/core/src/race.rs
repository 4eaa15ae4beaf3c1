//! Discrete-event simulation of RTP, UDP and TCP flows sharing a bottleneck.
//!
//! Sources feed a droptail router queue in front of a duplex link. The
//! forward direction carries data and sender reports, the reverse direction
//! carries TCP acknowledgements and receiver reports. Time is integer
//! nanoseconds; ties are broken by scheduling order, so a run is a pure
//! function of its scenario.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::metrics::FlowSample;
use crate::session::{JitterEstimator, NtpTime, RtpSession, SessionConfig};
use crate::wire::{self, RtcpPacket};

const RTP_CLOCK_RATE: u32 = 90_000;
const RTP_PAYLOAD_TYPE: u8 = 96;
const ACK_SIZE: usize = 40;
/// Share of the nominal RTP rate left for data once RTCP takes its cut.
pub const RTP_DATA_SHARE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum RaceError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario syntax: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    UdpCbr,
    RtpCbr,
    Tcp,
}

impl FlowKind {
    fn short(self) -> &'static str {
        match self {
            FlowKind::UdpCbr => "udp",
            FlowKind::RtpCbr => "rtp",
            FlowKind::Tcp => "tcp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub kind: FlowKind,
    /// bits/s; ignored for TCP.
    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_packet_size")]
    pub packet_size: usize,
    #[serde(default)]
    pub start_time: f64,
}

fn default_packet_size() -> usize {
    1000
}

impl FlowSpec {
    pub fn cbr(kind: FlowKind, rate: f64) -> Self {
        Self {
            kind,
            rate,
            packet_size: 1000,
            start_time: 0.0,
        }
    }

    pub fn tcp() -> Self {
        Self::cbr(FlowKind::Tcp, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub link_rate: f64,
    pub link_prop_delay: f64,
    pub queue_capacity: usize,
    pub flows: Vec<FlowSpec>,
    pub duration: f64,
    pub sample_window: f64,
    /// Windows before this time are excluded from steady-state checks.
    pub warmup: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            link_rate: 1.5e6,
            link_prop_delay: 0.01,
            queue_capacity: 50,
            flows: Vec::new(),
            duration: 60.0,
            sample_window: 0.1,
            warmup: 10.0,
            seed: 1,
        }
    }
}

impl Scenario {
    /// No congestion: 0.5 Mbps RTP and UDP beside one TCP flow.
    pub fn preset_a(seed: u64) -> Self {
        Self {
            flows: vec![
                FlowSpec::cbr(FlowKind::RtpCbr, 0.5e6),
                FlowSpec::cbr(FlowKind::UdpCbr, 0.5e6),
                FlowSpec::tcp(),
            ],
            seed,
            ..Self::default()
        }
    }

    /// Congestion: RTP and UDP at 1.0 Mbps each overload the link.
    pub fn preset_b(seed: u64) -> Self {
        Self {
            flows: vec![
                FlowSpec::cbr(FlowKind::RtpCbr, 1.0e6),
                FlowSpec::cbr(FlowKind::UdpCbr, 1.0e6),
                FlowSpec::tcp(),
            ],
            seed,
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, RaceError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, RaceError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), RaceError> {
        let bad = |m: &str| Err(RaceError::InvalidScenario(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.link_rate) {
            return bad("link_rate must be positive");
        }
        if !(self.link_prop_delay.is_finite() && self.link_prop_delay >= 0.0) {
            return bad("link_prop_delay must be non-negative");
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be at least 1");
        }
        if !positive(self.duration) || !positive(self.sample_window) || self.sample_window > self.duration {
            return bad("duration and sample_window must be positive, window <= duration");
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return bad("warmup must be non-negative");
        }
        if self.flows.is_empty() {
            return bad("at least one flow");
        }
        for f in &self.flows {
            if f.kind != FlowKind::Tcp && !positive(f.rate) {
                return bad("CBR flows need rate > 0");
            }
            if f.packet_size < ACK_SIZE || f.packet_size > 65_535 {
                return bad("packet_size out of range");
            }
            if !(f.start_time.is_finite() && f.start_time >= 0.0) {
                return bad("start_time must be non-negative");
            }
        }
        Ok(())
    }

    /// Flow labels as they appear in the output, e.g. `rtp`, `udp`, `tcp`,
    /// with a numeric suffix when a kind repeats.
    pub fn flow_names(&self) -> Vec<String> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        self.flows
            .iter()
            .map(|f| {
                let n = seen.entry(f.kind.short()).or_default();
                *n += 1;
                if *n == 1 {
                    f.kind.short().to_string()
                } else {
                    format!("{}{}", f.kind.short(), n)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpPhase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

pub const TCP_MIN_RTO: f64 = 0.2;
pub const TCP_MAX_RTO: f64 = 60.0;
pub const TCP_CLOCK_GRANULARITY: f64 = 0.01;
pub const TCP_INITIAL_RTO: f64 = 1.0;
pub const TCP_INITIAL_SSTHRESH: f64 = 64.0;

/// Reno sender state, in segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcpState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub phase: TcpPhase,
    pub dup_acks: u32,
    /// seconds
    pub rto: f64,
    pub srtt: Option<f64>,
    pub rttvar: f64,
    pub next_seq: u64,
    /// Cumulative ack: every segment below this has been received.
    pub highest_acked: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckOutcome {
    /// Acknowledged new data.
    Advanced,
    Duplicate,
    /// Third duplicate: retransmit `highest_acked` now.
    FastRetransmit,
}

impl Default for TcpState {
    fn default() -> Self {
        Self {
            cwnd: 1.0,
            ssthresh: TCP_INITIAL_SSTHRESH,
            phase: TcpPhase::SlowStart,
            dup_acks: 0,
            rto: TCP_INITIAL_RTO,
            srtt: None,
            rttvar: 0.0,
            next_seq: 0,
            highest_acked: 0,
        }
    }
}

impl TcpState {
    pub fn in_flight(&self) -> u64 {
        self.next_seq - self.highest_acked
    }

    pub fn can_send(&self) -> bool {
        self.in_flight() < self.cwnd.floor() as u64
    }

    pub fn on_ack(&mut self, acked_seq: u64) -> AckOutcome {
        debug_assert!(acked_seq >= self.highest_acked);
        if acked_seq > self.highest_acked {
            self.highest_acked = acked_seq;
            self.next_seq = self.next_seq.max(acked_seq);
            self.dup_acks = 0;
            match self.phase {
                TcpPhase::FastRecovery => {
                    self.cwnd = self.ssthresh;
                    self.phase = TcpPhase::CongestionAvoidance;
                }
                TcpPhase::SlowStart => {
                    self.cwnd += 1.0;
                    if self.cwnd >= self.ssthresh {
                        self.phase = TcpPhase::CongestionAvoidance;
                    }
                }
                TcpPhase::CongestionAvoidance => self.cwnd += 1.0 / self.cwnd,
            }
            return AckOutcome::Advanced;
        }
        if self.in_flight() == 0 {
            return AckOutcome::Duplicate;
        }
        self.dup_acks += 1;
        match self.phase {
            TcpPhase::FastRecovery => {
                self.cwnd += 1.0;
                AckOutcome::Duplicate
            }
            _ if self.dup_acks == 3 => {
                self.ssthresh = (self.cwnd / 2.0).max(2.0);
                self.cwnd = self.ssthresh + 3.0;
                self.phase = TcpPhase::FastRecovery;
                AckOutcome::FastRetransmit
            }
            _ => AckOutcome::Duplicate,
        }
    }

    /// Collapses the window and backs off the timer. The caller then resends
    /// from `highest_acked`.
    pub fn on_timeout(&mut self) {
        self.ssthresh = (self.cwnd / 2.0).max(2.0);
        self.cwnd = 1.0;
        self.phase = TcpPhase::SlowStart;
        self.dup_acks = 0;
        self.rto = (self.rto * 2.0).min(TCP_MAX_RTO);
        self.next_seq = self.highest_acked;
    }

    /// Standard smoothed estimator; also clears any timer backoff.
    pub fn on_rtt_sample(&mut self, r: f64) {
        match self.srtt {
            None => {
                self.srtt = Some(r);
                self.rttvar = r / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - r).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * r);
            }
        }
        let srtt = self.srtt.unwrap_or(r);
        self.rto = (srtt + (4.0 * self.rttvar).max(TCP_CLOCK_GRANULARITY)).clamp(TCP_MIN_RTO, TCP_MAX_RTO);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Forward,
    Reverse,
}

#[derive(Debug, Clone)]
enum Body {
    Cbr,
    RtpData { index: u64, bytes: Vec<u8> },
    Rtcp(Vec<u8>),
    TcpData { seq: u64 },
    TcpAck { ack: u64 },
}

#[derive(Debug, Clone)]
struct Packet {
    flow: usize,
    size: usize,
    sent: u64,
    body: Body,
}

#[derive(Debug)]
enum Event {
    CbrTick(usize),
    RtcpSender(usize),
    RtcpReceiver(usize),
    LinkDone(Dir),
    Arrive(Dir, Packet),
    Rto { flow: usize, generation: u64 },
    Sample,
}

struct Scheduled {
    at: u64,
    order: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

/// Router counters for the conservation identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkCounters {
    pub enqueued: u64,
    pub departed: u64,
    pub dropped: u64,
    pub queued: u64,
}

#[derive(Debug)]
struct Link {
    rate: f64,
    prop: u64,
    capacity: usize,
    queue: VecDeque<Packet>,
    in_service: Option<Packet>,
    counters: LinkCounters,
}

impl Link {
    fn serialization(&self, size: usize) -> u64 {
        (size as f64 * 8.0 / self.rate * 1e9).round() as u64
    }
}

/// Cross-check between RTCP receiver reports and the simulator's own drop
/// log for the RTP flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RtcpCheck {
    pub reports: u64,
    pub mismatches: u64,
    pub last_reported_lost: i32,
    pub last_counted_lost: u64,
}

#[derive(Debug, Clone)]
pub struct RaceOutcome {
    pub samples: Vec<FlowSample>,
    pub rtcp: RtcpCheck,
    pub forward: LinkCounters,
    pub reverse: LinkCounters,
}

#[derive(Debug, Default)]
struct Window {
    bits: u64,
    delay_sum: f64,
    delay_count: u64,
    drops: u64,
    last_delay: f64,
}

struct Rtp {
    sender: RtpSession,
    receiver: RtpSession,
    sent: u64,
    dropped: BTreeSet<u64>,
    first_received: Option<u64>,
    max_received: u64,
}

struct Tcp {
    state: TcpState,
    /// seq -> (last send time, retransmitted)
    outstanding: BTreeMap<u64, (u64, bool)>,
    first_sent: BTreeMap<u64, u64>,
    timer_generation: u64,
    timer_armed: bool,
    rcv_next: u64,
    out_of_order: BTreeSet<u64>,
}

struct Flow {
    spec: FlowSpec,
    interval: u64,
    window: Window,
    jitter: JitterEstimator,
    last_transit: Option<f64>,
    rtp: Option<Box<Rtp>>,
    tcp: Option<Tcp>,
}

struct Sim {
    now: u64,
    order: u64,
    events: BinaryHeap<Scheduled>,
    forward: Link,
    reverse: Link,
    flows: Vec<Flow>,
    names: Vec<String>,
    samples: Vec<FlowSample>,
    check: RtcpCheck,
    window_ns: u64,
    window_secs: f64,
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

fn ns_to_duration(ns: u64) -> Duration {
    Duration::from_nanos(ns)
}

pub fn run_scenario(s: &Scenario) -> Result<RaceOutcome, RaceError> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let link = |rate: f64| Link {
        rate,
        prop: secs_to_ns(s.link_prop_delay),
        capacity: s.queue_capacity,
        queue: VecDeque::new(),
        in_service: None,
        counters: LinkCounters::default(),
    };
    let window_ns = secs_to_ns(s.sample_window);
    let mut sim = Sim {
        now: 0,
        order: 0,
        events: BinaryHeap::new(),
        forward: link(s.link_rate),
        reverse: link(s.link_rate),
        flows: Vec::new(),
        names: s.flow_names(),
        samples: Vec::new(),
        check: RtcpCheck::default(),
        window_ns,
        window_secs: s.sample_window,
    };

    for (i, spec) in s.flows.iter().enumerate() {
        let start = secs_to_ns(spec.start_time);
        let mut flow = Flow {
            spec: spec.clone(),
            interval: 0,
            window: Window::default(),
            jitter: JitterEstimator::new(),
            last_transit: None,
            rtp: None,
            tcp: None,
        };
        match spec.kind {
            FlowKind::UdpCbr | FlowKind::RtpCbr => {
                let rate = if spec.kind == FlowKind::RtpCbr {
                    spec.rate * RTP_DATA_SHARE
                } else {
                    spec.rate
                };
                flow.interval = secs_to_ns(spec.packet_size as f64 * 8.0 / rate);
                let phase = rng.random_range(0..flow.interval.max(1));
                sim.schedule(start + phase, Event::CbrTick(i));
            }
            FlowKind::Tcp => {
                flow.tcp = Some(Tcp {
                    state: TcpState::default(),
                    outstanding: BTreeMap::new(),
                    first_sent: BTreeMap::new(),
                    timer_generation: 0,
                    timer_armed: false,
                    rcv_next: 0,
                    out_of_order: BTreeSet::new(),
                });
            }
        }
        if spec.kind == FlowKind::RtpCbr {
            let session = |ssrc: u32, cname: &str, seed: u64| {
                RtpSession::new(
                    SessionConfig {
                        ssrc,
                        payload_type: RTP_PAYLOAD_TYPE,
                        clock_rate: RTP_CLOCK_RATE,
                        session_bandwidth: spec.rate,
                        cname: cname.to_string(),
                        probation: false,
                    },
                    seed,
                    NtpTime::default(),
                )
            };
            let sender = session(rng.random(), "race-sender", rng.random());
            let receiver = session(rng.random(), "race-receiver", rng.random());
            sim.schedule(start + sender.next_rtcp_at().as_nanos() as u64, Event::RtcpSender(i));
            sim.schedule(
                start + receiver.next_rtcp_at().as_nanos() as u64,
                Event::RtcpReceiver(i),
            );
            flow.rtp = Some(Box::new(Rtp {
                sender,
                receiver,
                sent: 0,
                dropped: BTreeSet::new(),
                first_received: None,
                max_received: 0,
            }));
        }
        sim.flows.push(flow);
        if spec.kind == FlowKind::Tcp {
            // first segment goes out at start_time
            sim.schedule(
                start,
                Event::Rto {
                    flow: i,
                    generation: u64::MAX,
                },
            );
        }
    }
    sim.schedule(window_ns, Event::Sample);

    let end = secs_to_ns(s.duration);
    while let Some(next) = sim.events.pop() {
        if next.at > end {
            break;
        }
        sim.now = next.at;
        sim.dispatch(next.event);
    }
    sim.forward.counters.queued = sim.forward.queue.len() as u64 + sim.forward.in_service.is_some() as u64;
    sim.reverse.counters.queued = sim.reverse.queue.len() as u64 + sim.reverse.in_service.is_some() as u64;
    Ok(RaceOutcome {
        samples: sim.samples,
        rtcp: sim.check,
        forward: sim.forward.counters,
        reverse: sim.reverse.counters,
    })
}

impl Sim {
    fn schedule(&mut self, at: u64, event: Event) {
        self.order += 1;
        self.events.push(Scheduled {
            at,
            order: self.order,
            event,
        });
    }

    fn link(&mut self, dir: Dir) -> &mut Link {
        match dir {
            Dir::Forward => &mut self.forward,
            Dir::Reverse => &mut self.reverse,
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::CbrTick(i) => self.cbr_tick(i),
            Event::RtcpSender(i) => self.rtcp_tick(i, true),
            Event::RtcpReceiver(i) => self.rtcp_tick(i, false),
            Event::LinkDone(dir) => self.link_done(dir),
            Event::Arrive(dir, pkt) => self.arrive(dir, pkt),
            Event::Rto { flow, generation } => self.rto(flow, generation),
            Event::Sample => self.sample(),
        }
    }

    fn enqueue(&mut self, dir: Dir, pkt: Packet) {
        let now = self.now;
        let link = self.link(dir);
        link.counters.enqueued += 1;
        if link.in_service.is_none() {
            let done = now + link.serialization(pkt.size);
            link.in_service = Some(pkt);
            self.schedule(done, Event::LinkDone(dir));
        } else if link.queue.len() < link.capacity {
            link.queue.push_back(pkt);
        } else {
            link.counters.dropped += 1;
            let flow = &mut self.flows[pkt.flow];
            flow.window.drops += 1;
            if let (Some(rtp), Body::RtpData { index, .. }) = (flow.rtp.as_mut(), &pkt.body) {
                rtp.dropped.insert(*index);
            }
        }
    }

    fn link_done(&mut self, dir: Dir) {
        let now = self.now;
        let link = self.link(dir);
        let pkt = link.in_service.take().expect("link completion without packet");
        link.counters.departed += 1;
        let arrive_at = now + link.prop;
        let next = link.queue.pop_front().map(|p| (now + link.serialization(p.size), p));
        if let Some((done, p)) = next {
            self.link(dir).in_service = Some(p);
            self.schedule(done, Event::LinkDone(dir));
        }
        self.schedule(arrive_at, Event::Arrive(dir, pkt));
    }

    fn cbr_tick(&mut self, i: usize) {
        let now = self.now;
        let flow = &mut self.flows[i];
        let size = flow.spec.packet_size;
        let body = match flow.rtp.as_mut() {
            Some(rtp) => {
                let pkt = rtp.sender.send(vec![0; size - 12], false, ns_to_duration(now));
                rtp.sent += 1;
                Body::RtpData {
                    index: rtp.sent - 1,
                    bytes: wire::encode_rtp(&pkt).expect("valid RTP packet"),
                }
            }
            None => Body::Cbr,
        };
        let interval = flow.interval;
        self.enqueue(
            Dir::Forward,
            Packet {
                flow: i,
                size,
                sent: now,
                body,
            },
        );
        self.schedule(now + interval, Event::CbrTick(i));
    }

    fn rtcp_tick(&mut self, i: usize, sender_side: bool) {
        let now = self.now;
        let at = ns_to_duration(now);
        let Some(rtp) = self.flows[i].rtp.as_mut() else { return };
        let session = if sender_side {
            &mut rtp.sender
        } else {
            &mut rtp.receiver
        };
        let Some(report) = session.poll_rtcp(at) else {
            let next = session.next_rtcp_at().as_nanos() as u64;
            let event = if sender_side {
                Event::RtcpSender(i)
            } else {
                Event::RtcpReceiver(i)
            };
            self.schedule(next.max(now + 1), event);
            return;
        };
        let bytes = wire::encode_rtcp_compound(&report).expect("session builds valid compounds");
        session.on_rtcp_sent(bytes.len());
        let next = session.next_rtcp_at().as_nanos() as u64;
        if !sender_side {
            for block in report.iter().flat_map(|p| p.reports()) {
                let counted = match rtp.first_received {
                    Some(first) => rtp.dropped.range(first..=rtp.max_received).count() as u64,
                    None => 0,
                };
                self.check.reports += 1;
                if block.cumulative_lost as i64 != counted as i64 {
                    self.check.mismatches += 1;
                }
                self.check.last_reported_lost = block.cumulative_lost;
                self.check.last_counted_lost = counted;
            }
        }
        let (dir, event) = if sender_side {
            (Dir::Forward, Event::RtcpSender(i))
        } else {
            (Dir::Reverse, Event::RtcpReceiver(i))
        };
        self.schedule(next.max(now + 1), event);
        let size = bytes.len();
        self.enqueue(
            dir,
            Packet {
                flow: i,
                size,
                sent: now,
                body: Body::Rtcp(bytes),
            },
        );
    }

    fn record_delivery(&mut self, i: usize, bits: u64, sent: u64, jitter_ms: Option<f64>) {
        let now = self.now;
        let flow = &mut self.flows[i];
        let transit = (now - sent) as f64 / 1e6;
        flow.window.bits += bits;
        flow.window.delay_sum += transit;
        flow.window.delay_count += 1;
        match jitter_ms {
            Some(_) => {}
            None => {
                if let Some(prev) = flow.last_transit {
                    flow.jitter.update(transit - prev);
                }
                flow.last_transit = Some(transit);
            }
        }
    }

    fn arrive(&mut self, dir: Dir, pkt: Packet) {
        let now = self.now;
        let at = ns_to_duration(now);
        let i = pkt.flow;
        match (dir, pkt.body) {
            (Dir::Forward, Body::Cbr) => self.record_delivery(i, pkt.size as u64 * 8, pkt.sent, None),
            (Dir::Forward, Body::RtpData { index, bytes }) => {
                let rtp = self.flows[i].rtp.as_mut().expect("rtp flow state");
                let decoded = wire::decode_rtp(&bytes).expect("simulator carries valid packets");
                rtp.receiver.receive(&decoded, at);
                rtp.first_received.get_or_insert(index);
                rtp.max_received = rtp.max_received.max(index);
                self.record_delivery(i, pkt.size as u64 * 8, pkt.sent, Some(0.0));
            }
            (dir, Body::Rtcp(bytes)) => {
                let rtp = self.flows[i].rtp.as_mut().expect("rtp flow state");
                let pkts: Vec<RtcpPacket> = wire::decode_rtcp_compound(&bytes).expect("valid compound");
                let session = if dir == Dir::Forward {
                    &mut rtp.receiver
                } else {
                    &mut rtp.sender
                };
                session.receive_rtcp(&pkts, bytes.len(), at);
                self.flows[i].window.bits += pkt.size as u64 * 8;
            }
            (Dir::Forward, Body::TcpData { seq }) => self.tcp_receive(i, seq),
            (Dir::Reverse, Body::TcpAck { ack }) => self.tcp_ack(i, ack),
            _ => unreachable!("packet on the wrong direction"),
        }
    }

    fn tcp_receive(&mut self, i: usize, seq: u64) {
        let size = self.flows[i].spec.packet_size;
        let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
        let mut delivered = Vec::new();
        if seq == tcp.rcv_next {
            delivered.push(seq);
            tcp.rcv_next += 1;
            while tcp.out_of_order.remove(&tcp.rcv_next) {
                delivered.push(tcp.rcv_next);
                tcp.rcv_next += 1;
            }
        } else if seq > tcp.rcv_next {
            tcp.out_of_order.insert(seq);
        }
        let ack = tcp.rcv_next;
        let first_sent: Vec<u64> = delivered.iter().map(|s| tcp.first_sent[s]).collect();
        for sent in first_sent {
            self.record_delivery(i, size as u64 * 8, sent, None);
        }
        let now = self.now;
        self.enqueue(
            Dir::Reverse,
            Packet {
                flow: i,
                size: ACK_SIZE,
                sent: now,
                body: Body::TcpAck { ack },
            },
        );
    }

    fn tcp_ack(&mut self, i: usize, ack: u64) {
        let now = self.now;
        let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
        if ack < tcp.state.highest_acked {
            return;
        }
        let before = tcp.state.highest_acked;
        let outcome = tcp.state.on_ack(ack);
        if outcome == AckOutcome::Advanced {
            if let Some(&(sent, retransmitted)) = tcp.outstanding.get(&(ack - 1)) {
                if !retransmitted {
                    tcp.state.on_rtt_sample((now - sent) as f64 / 1e9);
                }
            }
            for s in before..ack {
                tcp.outstanding.remove(&s);
            }
            // the receiver has consumed everything below the ack
            tcp.first_sent = tcp.first_sent.split_off(&ack);
            tcp.timer_armed = false;
        }
        if outcome == AckOutcome::FastRetransmit {
            let seq = tcp.state.highest_acked;
            self.tcp_transmit(i, seq);
            self.arm_timer(i, true);
        }
        self.tcp_fill_window(i);
        let tcp = self.flows[i].tcp.as_ref().expect("tcp flow state");
        if tcp.state.in_flight() > 0 && !tcp.timer_armed {
            self.arm_timer(i, true);
        }
    }

    fn tcp_transmit(&mut self, i: usize, seq: u64) {
        let now = self.now;
        let size = self.flows[i].spec.packet_size;
        let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
        let retransmitted = tcp.first_sent.contains_key(&seq);
        tcp.outstanding.insert(seq, (now, retransmitted));
        tcp.first_sent.entry(seq).or_insert(now);
        self.enqueue(
            Dir::Forward,
            Packet {
                flow: i,
                size,
                sent: now,
                body: Body::TcpData { seq },
            },
        );
    }

    fn tcp_fill_window(&mut self, i: usize) {
        loop {
            let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
            if !tcp.state.can_send() {
                break;
            }
            let seq = tcp.state.next_seq;
            tcp.state.next_seq += 1;
            self.tcp_transmit(i, seq);
        }
        let tcp = self.flows[i].tcp.as_ref().expect("tcp flow state");
        if tcp.state.in_flight() > 0 && !tcp.timer_armed {
            self.arm_timer(i, false);
        }
    }

    fn arm_timer(&mut self, i: usize, restart: bool) {
        let now = self.now;
        let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
        if tcp.timer_armed && !restart {
            return;
        }
        tcp.timer_generation += 1;
        tcp.timer_armed = true;
        let generation = tcp.timer_generation;
        let at = now + secs_to_ns(tcp.state.rto);
        self.schedule(at, Event::Rto { flow: i, generation });
    }

    fn rto(&mut self, i: usize, generation: u64) {
        if generation == u64::MAX {
            // flow start
            self.tcp_fill_window(i);
            return;
        }
        let tcp = self.flows[i].tcp.as_mut().expect("tcp flow state");
        if !tcp.timer_armed || generation != tcp.timer_generation {
            return;
        }
        tcp.timer_armed = false;
        if tcp.state.in_flight() == 0 {
            return;
        }
        tcp.state.on_timeout();
        // everything in flight will be resent
        for v in tcp.outstanding.values_mut() {
            v.1 = true;
        }
        self.tcp_fill_window(i);
    }

    fn sample(&mut self) {
        let now = self.now;
        let t = now as f64 / 1e9;
        for (i, flow) in self.flows.iter_mut().enumerate() {
            let w = std::mem::take(&mut flow.window);
            let delay = if w.delay_count > 0 {
                w.delay_sum / w.delay_count as f64
            } else {
                w.last_delay
            };
            flow.window.last_delay = delay;
            let jitter_ms = match flow.rtp.as_ref() {
                Some(rtp) => rtp
                    .receiver
                    .sources()
                    .next()
                    .map_or(0.0, |s| s.jitter_ticks() * 1000.0 / RTP_CLOCK_RATE as f64),
                None => flow.jitter.value(),
            };
            self.samples.push(FlowSample {
                t,
                flow: self.names[i].clone(),
                throughput_bps: w.bits as f64 / self.window_secs,
                delay_ms: delay,
                jitter_ms,
                drops: w.drops,
            });
        }
        self.schedule(now + self.window_ns, Event::Sample);
    }
}

/// Steady-state view of one flow.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowSteady {
    pub windows: usize,
    pub mean_throughput_bps: f64,
    pub mean_delay_ms: f64,
    pub mean_jitter_ms: f64,
}

/// Per-flow means over windows ending after `warmup`.
pub fn steady_state(samples: &[FlowSample], warmup: f64) -> BTreeMap<String, FlowSteady> {
    let mut acc: BTreeMap<String, FlowSteady> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.t > warmup + 1e-9) {
        let e = acc.entry(s.flow.clone()).or_default();
        e.windows += 1;
        e.mean_throughput_bps += s.throughput_bps;
        e.mean_delay_ms += s.delay_ms;
        e.mean_jitter_ms += s.jitter_ms;
    }
    for e in acc.values_mut() {
        let n = e.windows.max(1) as f64;
        e.mean_throughput_bps /= n;
        e.mean_delay_ms /= n;
        e.mean_jitter_ms /= n;
    }
    acc
}

/// Groups post-warmup samples by window time, flow -> sample.
pub fn windows_after(samples: &[FlowSample], warmup: f64) -> Vec<BTreeMap<&str, &FlowSample>> {
    let mut by_t: BTreeMap<u64, BTreeMap<&str, &FlowSample>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.t > warmup + 1e-9) {
        by_t.entry(secs_to_ns(s.t)).or_default().insert(&s.flow, s);
    }
    by_t.into_values().collect()
}

/// Fraction of post-warmup windows satisfying `pred`.
pub fn window_fraction<F>(samples: &[FlowSample], warmup: f64, pred: F) -> f64
where
    F: Fn(&BTreeMap<&str, &FlowSample>) -> bool,
{
    let windows = windows_after(samples, warmup);
    if windows.is_empty() {
        return 0.0;
    }
    windows.iter().filter(|w| pred(w)).count() as f64 / windows.len() as f64
}
