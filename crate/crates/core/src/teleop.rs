//! Command/telemetry control plane.
//!
//! Three RTP sessions carry the traffic: commands (PT 96) from operator to
//! server, telemetry (PT 97) and synthetic media (PT 98) back. The server
//! bridges operator commands to the robot, enforces a watchdog and an e-stop
//! latch, and reports pose and sonar. The client side packs commands with
//! redundancy and measures what comes back.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::playout::{InsertOutcome, PlayoutBuffer, PlayoutConfig, Released};
use crate::robot::{media_frame, verify_media_frame, MediaConfig, Robot, RobotConfig, RobotPose, SonarConfig, WallMap};
use crate::session::{NtpTime, Reception, RtpSession, SessionConfig};
use crate::wire::{self, RtpPacket};

pub const PT_COMMAND: u8 = 96;
pub const PT_TELEMETRY: u8 = 97;
pub const PT_MEDIA: u8 = 98;
pub const CONTROL_CLOCK_RATE: u32 = 1000;
pub const MEDIA_CLOCK_RATE: u32 = 90_000;

pub const COMMAND_LEN: usize = 5;
pub const TELEMETRY_LEN: usize = 20;
/// Each command packet repeats up to this many preceding commands.
pub const COMMAND_REDUNDANCY: usize = 2;

const CMD_VELOCITY: u8 = 0;
const CMD_STOP: u8 = 1;
const CMD_ESTOP: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeleopError {
    #[error("payload length {got}, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("unknown command type {0}")]
    UnknownCmdType(u8),
    #[error("stop/estop command carries nonzero velocity")]
    NonzeroHalt,
    #[error("console message violates schema: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// v in mm/s, w in mrad/s.
    Velocity {
        v: i16,
        w: i16,
    },
    Stop,
    EStop,
}

pub fn encode_command(cmd: &Command) -> [u8; COMMAND_LEN] {
    let (kind, v, w) = match *cmd {
        Command::Velocity { v, w } => (CMD_VELOCITY, v, w),
        Command::Stop => (CMD_STOP, 0, 0),
        Command::EStop => (CMD_ESTOP, 0, 0),
    };
    let [v0, v1] = v.to_be_bytes();
    let [w0, w1] = w.to_be_bytes();
    [kind, v0, v1, w0, w1]
}

pub fn decode_command(buf: &[u8]) -> Result<Command, TeleopError> {
    if buf.len() != COMMAND_LEN {
        return Err(TeleopError::BadLength {
            got: buf.len(),
            expected: COMMAND_LEN,
        });
    }
    let v = i16::from_be_bytes([buf[1], buf[2]]);
    let w = i16::from_be_bytes([buf[3], buf[4]]);
    match buf[0] {
        CMD_VELOCITY => Ok(Command::Velocity { v, w }),
        CMD_STOP | CMD_ESTOP if v != 0 || w != 0 => Err(TeleopError::NonzeroHalt),
        CMD_STOP => Ok(Command::Stop),
        CMD_ESTOP => Ok(Command::EStop),
        other => Err(TeleopError::UnknownCmdType(other)),
    }
}

/// Packs the current command followed by up to [`COMMAND_REDUNDANCY`]
/// predecessors, newest first. Record `k` belongs to RTP sequence `seq - k`.
pub fn encode_command_bundle(newest_first: &[Command]) -> Vec<u8> {
    newest_first
        .iter()
        .take(1 + COMMAND_REDUNDANCY)
        .flat_map(encode_command)
        .collect()
}

pub fn decode_command_bundle(buf: &[u8]) -> Result<Vec<Command>, TeleopError> {
    let records = buf.len() / COMMAND_LEN;
    if !buf.len().is_multiple_of(COMMAND_LEN) || records == 0 || records > 1 + COMMAND_REDUNDANCY {
        return Err(TeleopError::BadLength {
            got: buf.len(),
            expected: COMMAND_LEN,
        });
    }
    buf.chunks_exact(COMMAND_LEN).map(decode_command).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Telemetry {
    pub x: i32,
    pub y: i32,
    /// mrad
    pub theta: i32,
    /// front, left, right in mm.
    pub sonar: [u16; 3],
    pub last_cmd_seq: u16,
}

impl Telemetry {
    pub fn from_pose(pose: &RobotPose, sonar: [u16; 3], last_cmd_seq: u16) -> Self {
        let mut theta = pose.theta.round() as i32;
        // rounding can land exactly on -pi
        if theta <= -3142 {
            theta += 6283;
        }
        Self {
            x: pose.x.round() as i32,
            y: pose.y.round() as i32,
            theta,
            sonar,
            last_cmd_seq,
        }
    }

    pub fn pose(&self) -> RobotPose {
        RobotPose::at(self.x as f64, self.y as f64, self.theta as f64)
    }
}

pub fn encode_telemetry(t: &Telemetry) -> [u8; TELEMETRY_LEN] {
    let mut out = [0u8; TELEMETRY_LEN];
    out[0..4].copy_from_slice(&t.x.to_be_bytes());
    out[4..8].copy_from_slice(&t.y.to_be_bytes());
    out[8..12].copy_from_slice(&t.theta.to_be_bytes());
    for (i, s) in t.sonar.iter().enumerate() {
        out[12 + 2 * i..14 + 2 * i].copy_from_slice(&s.to_be_bytes());
    }
    out[18..20].copy_from_slice(&t.last_cmd_seq.to_be_bytes());
    out
}

pub fn decode_telemetry(buf: &[u8]) -> Result<Telemetry, TeleopError> {
    if buf.len() != TELEMETRY_LEN {
        return Err(TeleopError::BadLength {
            got: buf.len(),
            expected: TELEMETRY_LEN,
        });
    }
    let i32_at = |o: usize| i32::from_be_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]);
    let u16_at = |o: usize| u16::from_be_bytes([buf[o], buf[o + 1]]);
    Ok(Telemetry {
        x: i32_at(0),
        y: i32_at(4),
        theta: i32_at(8),
        sonar: [u16_at(12), u16_at(14), u16_at(16)],
        last_cmd_seq: u16_at(18),
    })
}

/// Which RTP session a datagram belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Command,
    Telemetry,
    Media,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub stream: Stream,
    pub rtcp: bool,
    pub bytes: Vec<u8>,
}

impl Datagram {
    fn rtp(stream: Stream, pkt: &RtpPacket) -> Self {
        Self {
            stream,
            rtcp: false,
            bytes: wire::encode_rtp(pkt).expect("locally built packets are valid"),
        }
    }

    /// One-byte stream tag plus the datagram, for carrying several streams
    /// through one simulated path.
    pub fn to_frame(&self) -> Vec<u8> {
        let tag = match self.stream {
            Stream::Command => 0,
            Stream::Telemetry => 2,
            Stream::Media => 4,
        } | self.rtcp as u8;
        let mut out = Vec::with_capacity(1 + self.bytes.len());
        out.push(tag);
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_frame(frame: &[u8]) -> Option<Self> {
        let (&tag, bytes) = frame.split_first()?;
        let stream = match tag & !1 {
            0 => Stream::Command,
            2 => Stream::Telemetry,
            4 => Stream::Media,
            _ => return None,
        };
        Some(Self {
            stream,
            rtcp: tag & 1 == 1,
            bytes: bytes.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub tick_rate_hz: f64,
    pub telemetry_hz: f64,
    pub watchdog_ms: f64,
    pub session_bandwidth_bps: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tick_rate_hz: 100.0,
            telemetry_hz: 20.0,
            watchdog_ms: 500.0,
            session_bandwidth_bps: 500_000.0,
        }
    }
}

impl ServerConfig {
    pub fn tick_period(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.tick_rate_hz)
    }

    pub fn watchdog(&self) -> Duration {
        Duration::from_secs_f64(self.watchdog_ms / 1000.0)
    }
}

/// Everything the server loop needs besides the map.
#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(default)]
pub struct TeleopConfig {
    pub teleop: ServerConfig,
    pub robot: RobotConfig,
    pub sonar: SonarConfig,
    pub media: MediaConfig,
    pub playout: PlayoutConfig,
    pub command_playout: CommandPlayout,
}

/// Command-channel playout settings (fixed 30 ms unless overridden).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct CommandPlayout(pub PlayoutConfig);

impl Default for CommandPlayout {
    fn default() -> Self {
        Self(PlayoutConfig::command())
    }
}

impl TeleopConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// SSRCs and session seeds derived from one run seed.
#[derive(Debug, Clone, Copy)]
pub struct SessionIds {
    pub command: u32,
    pub telemetry: u32,
    pub media: u32,
    pub operator: u32,
    pub seed: u64,
}

impl SessionIds {
    pub fn from_seed(seed: u64) -> Self {
        let mix = |k: u64| {
            let mut z = seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            (z ^ (z >> 31)) as u32
        };
        Self {
            command: mix(1),
            telemetry: mix(2),
            media: mix(3),
            operator: mix(4),
            seed,
        }
    }
}

fn session(ssrc: u32, pt: u8, clock_rate: u32, bandwidth: f64, cname: &str, seed: u64, wall: NtpTime) -> RtpSession {
    RtpSession::new(
        SessionConfig {
            ssrc,
            payload_type: pt,
            clock_rate,
            session_bandwidth: bandwidth,
            cname: cname.to_string(),
            probation: false,
        },
        seed,
        wall,
    )
}

/// Snapshot of the server's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ServerStats {
    pub commands_applied: u64,
    pub watchdog_trips: u64,
    pub malformed: u64,
    pub estop_latched: bool,
    pub last_cmd_seq: u16,
    pub last_command_arrival: Option<Duration>,
}

/// The bridge between operator and robot. Owned by one event loop; all
/// network I/O reaches it through [`TeleopServer::receive`] and
/// [`TeleopServer::tick`].
#[derive(Debug)]
pub struct TeleopServer {
    config: TeleopConfig,
    robot: Robot,
    cmd_session: RtpSession,
    telem_session: RtpSession,
    media_session: RtpSession,
    cmd_playout: PlayoutBuffer,
    last_applied: Option<u64>,
    estop_latched: bool,
    watchdog_deadline: Option<Duration>,
    last_tick: Option<Duration>,
    next_telemetry: Duration,
    next_media: Duration,
    media_tick: u64,
    stats: ServerStats,
}

impl TeleopServer {
    pub fn new(map: Arc<WallMap>, config: TeleopConfig, ids: SessionIds, wall: NtpTime) -> Self {
        let bw = config.teleop.session_bandwidth_bps;
        let media_bw = config.media.frame_bytes as f64 * 8.0 * config.media.fps;
        Self {
            robot: Robot::new(map, config.robot, config.sonar),
            cmd_session: session(
                ids.command,
                PT_COMMAND,
                CONTROL_CLOCK_RATE,
                bw,
                "server-cmd",
                ids.seed ^ 1,
                wall,
            ),
            telem_session: session(
                ids.telemetry,
                PT_TELEMETRY,
                CONTROL_CLOCK_RATE,
                bw,
                "server-telemetry",
                ids.seed ^ 2,
                wall,
            ),
            media_session: session(
                ids.media,
                PT_MEDIA,
                MEDIA_CLOCK_RATE,
                media_bw,
                "server-media",
                ids.seed ^ 3,
                wall,
            ),
            cmd_playout: PlayoutBuffer::new(config.command_playout.0, CONTROL_CLOCK_RATE),
            last_applied: None,
            estop_latched: false,
            watchdog_deadline: None,
            last_tick: None,
            next_telemetry: Duration::ZERO,
            next_media: Duration::ZERO,
            media_tick: 0,
            stats: ServerStats::default(),
            config,
        }
    }

    pub fn robot(&self) -> &Robot {
        &self.robot
    }

    pub fn pose(&self) -> RobotPose {
        self.robot.pose()
    }

    pub fn config(&self) -> &TeleopConfig {
        &self.config
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            estop_latched: self.estop_latched,
            ..self.stats
        }
    }

    pub fn telemetry_session(&self) -> &RtpSession {
        &self.telem_session
    }

    pub fn media_session(&self) -> &RtpSession {
        &self.media_session
    }

    pub fn command_session(&self) -> &RtpSession {
        &self.cmd_session
    }

    /// Extended sequence number of the newest applied command record.
    pub fn last_applied(&self) -> Option<u64> {
        self.last_applied
    }

    pub fn watchdog_deadline(&self) -> Option<Duration> {
        self.watchdog_deadline
    }

    /// Handles one inbound datagram.
    pub fn receive(&mut self, d: &Datagram, now: Duration) {
        let session = match d.stream {
            Stream::Command => &mut self.cmd_session,
            Stream::Telemetry => &mut self.telem_session,
            Stream::Media => &mut self.media_session,
        };
        if d.rtcp {
            match wire::decode_rtcp_compound(&d.bytes) {
                Ok(pkts) => session.receive_rtcp(&pkts, d.bytes.len(), now),
                Err(_) => self.stats.malformed += 1,
            }
            return;
        }
        if d.stream != Stream::Command {
            self.stats.malformed += 1;
            return;
        }
        let pkt = match wire::decode_rtp(&d.bytes) {
            Ok(p) if p.payload_type == PT_COMMAND => p,
            _ => {
                self.stats.malformed += 1;
                return;
            }
        };
        if self.cmd_session.receive(&pkt, now) == Reception::Probation {
            return;
        }
        let jitter = self.cmd_session.source(pkt.ssrc).map_or(0.0, |s| s.jitter_ticks());
        if let InsertOutcome::Overflow(released) = self.cmd_playout.insert(pkt, now, jitter) {
            self.apply_commands(vec![released]);
        }
    }

    /// Advances the server to `now`: integrates motion since the previous
    /// tick (cut short at the watchdog deadline), applies released commands
    /// and emits whatever telemetry, media and RTCP is due.
    pub fn tick(&mut self, now: Duration) -> Vec<Datagram> {
        let last = self.last_tick.unwrap_or(now);
        self.last_tick = Some(now);
        if now > last {
            match self.watchdog_deadline {
                Some(deadline) if deadline < now && self.robot.pose().is_moving() => {
                    self.robot.step(deadline.saturating_sub(last).as_secs_f64());
                    self.trip_watchdog();
                    self.robot.step((now - deadline.max(last)).as_secs_f64());
                }
                _ => self.robot.step((now - last).as_secs_f64()),
            }
        }

        let released = self.cmd_playout.poll_due(now);
        self.apply_commands(released);
        if self.watchdog_deadline.is_some_and(|d| now >= d) && self.robot.pose().is_moving() {
            self.trip_watchdog();
        }

        let mut out = Vec::new();
        if now >= self.next_telemetry {
            let period = Duration::from_secs_f64(1.0 / self.config.teleop.telemetry_hz);
            self.next_telemetry = advance(self.next_telemetry, period, now);
            let t = Telemetry::from_pose(
                &self.robot.pose(),
                self.robot.sonar().as_array(),
                self.stats.last_cmd_seq,
            );
            let pkt = self.telem_session.send(encode_telemetry(&t).to_vec(), false, now);
            out.push(Datagram::rtp(Stream::Telemetry, &pkt));
        }
        if self.config.media.fps > 0.0 && now >= self.next_media {
            let period = Duration::from_secs_f64(1.0 / self.config.media.fps);
            self.next_media = advance(self.next_media, period, now);
            let frame = media_frame(self.media_tick, self.config.media.frame_bytes);
            self.media_tick += 1;
            let pkt = self.media_session.send(frame, true, now);
            out.push(Datagram::rtp(Stream::Media, &pkt));
        }
        for (stream, session) in [
            (Stream::Command, &mut self.cmd_session),
            (Stream::Telemetry, &mut self.telem_session),
            (Stream::Media, &mut self.media_session),
        ] {
            if let Some(pkts) = session.poll_rtcp(now) {
                if let Ok(bytes) = wire::encode_rtcp_compound(&pkts) {
                    session.on_rtcp_sent(bytes.len());
                    out.push(Datagram {
                        stream,
                        rtcp: true,
                        bytes,
                    });
                }
            }
        }
        out
    }

    fn trip_watchdog(&mut self) {
        self.robot.halt();
        self.stats.watchdog_trips += 1;
    }

    /// Applies released command packets in sequence order. Redundant records
    /// already applied are skipped; the newest velocity wins.
    pub fn apply_commands(&mut self, released: Vec<Released>) {
        for r in released {
            let records = match decode_command_bundle(&r.packet.payload) {
                Ok(records) => records,
                Err(_) => {
                    self.stats.malformed += 1;
                    continue;
                }
            };
            for (k, cmd) in records.iter().enumerate().rev() {
                let Some(seq) = r.ext_seq.checked_sub(k as u64) else {
                    continue;
                };
                if self.last_applied.is_some_and(|last| seq <= last) {
                    continue;
                }
                self.last_applied = Some(seq);
                self.stats.last_cmd_seq = r.packet.sequence.wrapping_sub(k as u16);
                self.stats.commands_applied += 1;
                self.execute(*cmd);
            }
            self.watchdog_deadline = Some(r.arrival + self.config.teleop.watchdog());
            self.stats.last_command_arrival = Some(r.arrival);
        }
    }

    fn execute(&mut self, cmd: Command) {
        match cmd {
            Command::Velocity { v, w } if !self.estop_latched => self.robot.command(v as f64, w as f64),
            Command::Velocity { .. } => {}
            Command::Stop => {
                self.estop_latched = false;
                self.robot.halt();
            }
            Command::EStop => {
                self.estop_latched = true;
                self.robot.halt();
            }
        }
    }
}

fn advance(next: Duration, period: Duration, now: Duration) -> Duration {
    let n = next + period;
    if n <= now {
        now + period
    } else {
        n
    }
}

/// Telemetry as seen by the operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryEvent {
    pub telemetry: Telemetry,
    pub sequence: u16,
    pub arrival: Duration,
    /// One-way delay; only known when both ends share a clock.
    pub delay: Option<Duration>,
    pub jitter: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClientStats {
    pub commands_sent: u64,
    pub telemetry_received: u64,
    pub media_frames_ok: u64,
    pub media_frames_corrupt: u64,
    pub late_drops: u64,
    pub telemetry_lost: i64,
    pub telemetry_jitter: Duration,
    pub rtt: Option<Duration>,
}

/// Operator-side endpoint: sends commands, receives telemetry and media.
#[derive(Debug)]
pub struct TeleopClient {
    cmd_session: RtpSession,
    telem_session: RtpSession,
    media_session: RtpSession,
    telem_playout: PlayoutBuffer,
    recent: VecDeque<Command>,
    shared_clock: Option<(u32, Duration)>,
    latest: Option<TelemetryEvent>,
    stats: ClientStats,
}

impl TeleopClient {
    pub fn new(config: &TeleopConfig, ids: SessionIds, wall: NtpTime) -> Self {
        let bw = config.teleop.session_bandwidth_bps;
        let media_bw = config.media.frame_bytes as f64 * 8.0 * config.media.fps;
        Self {
            cmd_session: session(
                ids.operator,
                PT_COMMAND,
                CONTROL_CLOCK_RATE,
                bw,
                "operator",
                ids.seed ^ 4,
                wall,
            ),
            telem_session: session(
                ids.operator,
                PT_TELEMETRY,
                CONTROL_CLOCK_RATE,
                bw,
                "operator",
                ids.seed ^ 5,
                wall,
            ),
            media_session: session(
                ids.operator,
                PT_MEDIA,
                MEDIA_CLOCK_RATE,
                media_bw,
                "operator",
                ids.seed ^ 6,
                wall,
            ),
            telem_playout: PlayoutBuffer::new(config.playout, CONTROL_CLOCK_RATE),
            recent: VecDeque::with_capacity(COMMAND_REDUNDANCY + 1),
            shared_clock: None,
            latest: None,
            stats: ClientStats::default(),
        }
    }

    pub fn command_session(&self) -> &RtpSession {
        &self.cmd_session
    }

    pub fn telemetry_session(&self) -> &RtpSession {
        &self.telem_session
    }

    /// Declares that the telemetry sender's timestamp `initial_ts` was taken
    /// at local time `origin`, enabling one-way delay measurement. Playout
    /// still anchors on the first arrival.
    pub fn set_shared_clock(&mut self, initial_ts: u32, origin: Duration) {
        self.shared_clock = Some((initial_ts, origin));
    }

    pub fn latest(&self) -> Option<&TelemetryEvent> {
        self.latest.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        let source = self.telem_session.sources().next();
        ClientStats {
            late_drops: self.telem_playout.stats().late_drops,
            telemetry_lost: source.map_or(0, |s| s.stats().cumulative_lost),
            telemetry_jitter: source.map_or(Duration::ZERO, |s| s.jitter()),
            rtt: self.cmd_session.rtt(),
            ..self.stats
        }
    }

    pub fn send_command(&mut self, cmd: Command, now: Duration) -> Datagram {
        self.recent.push_front(cmd);
        self.recent.truncate(1 + COMMAND_REDUNDANCY);
        let records: Vec<Command> = self.recent.iter().copied().collect();
        let pkt = self.cmd_session.send(encode_command_bundle(&records), false, now);
        self.stats.commands_sent += 1;
        Datagram::rtp(Stream::Command, &pkt)
    }

    pub fn receive(&mut self, d: &Datagram, now: Duration) {
        let session = match d.stream {
            Stream::Command => &mut self.cmd_session,
            Stream::Telemetry => &mut self.telem_session,
            Stream::Media => &mut self.media_session,
        };
        if d.rtcp {
            if let Ok(pkts) = wire::decode_rtcp_compound(&d.bytes) {
                session.receive_rtcp(&pkts, d.bytes.len(), now);
            }
            return;
        }
        let Ok(pkt) = wire::decode_rtp(&d.bytes) else { return };
        match (d.stream, pkt.payload_type) {
            (Stream::Telemetry, PT_TELEMETRY) => {
                self.telem_session.receive(&pkt, now);
                let jitter = self.telem_session.source(pkt.ssrc).map_or(0.0, |s| s.jitter_ticks());
                self.telem_playout.insert(pkt, now, jitter);
            }
            (Stream::Media, PT_MEDIA) => {
                self.media_session.receive(&pkt, now);
                if verify_media_frame(&pkt.payload).is_some() {
                    self.stats.media_frames_ok += 1;
                } else {
                    self.stats.media_frames_corrupt += 1;
                }
            }
            _ => {}
        }
    }

    /// One-way delay of a telemetry packet stamped `rtp_ts` that arrived at
    /// `arrival`, when a shared clock is declared.
    pub fn one_way_delay(&self, rtp_ts: u32, arrival: Duration) -> Option<Duration> {
        let (ts0, origin) = self.shared_clock?;
        let sent = origin + Duration::from_millis(rtp_ts.wrapping_sub(ts0) as u64);
        arrival.checked_sub(sent)
    }

    /// Telemetry released by the playout buffer by `now`.
    pub fn poll(&mut self, now: Duration) -> Vec<TelemetryEvent> {
        let mut events = Vec::new();
        for r in self.telem_playout.poll_due(now) {
            let Ok(telemetry) = decode_telemetry(&r.packet.payload) else {
                continue;
            };
            let jitter = self
                .telem_session
                .source(r.packet.ssrc)
                .map_or(Duration::ZERO, |s| s.jitter());
            let event = TelemetryEvent {
                telemetry,
                sequence: r.packet.sequence,
                arrival: r.arrival,
                delay: self.one_way_delay(r.packet.timestamp, r.arrival),
                jitter,
            };
            self.stats.telemetry_received += 1;
            self.latest = Some(event);
            events.push(event);
        }
        events
    }

    /// RTCP for the operator's sessions, when due.
    pub fn poll_rtcp(&mut self, now: Duration) -> Vec<Datagram> {
        let mut out = Vec::new();
        for (stream, session) in [
            (Stream::Command, &mut self.cmd_session),
            (Stream::Telemetry, &mut self.telem_session),
            (Stream::Media, &mut self.media_session),
        ] {
            if let Some(pkts) = session.poll_rtcp(now) {
                if let Ok(bytes) = wire::encode_rtcp_compound(&pkts) {
                    session.on_rtcp_sent(bytes.len());
                    out.push(Datagram {
                        stream,
                        rtcp: true,
                        bytes,
                    });
                }
            }
        }
        out
    }
}

/// Messages on the operator console's text socket, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConsoleMessage {
    Cmd {
        v: i16,
        w: i16,
    },
    Stop,
    Estop,
    Telemetry {
        x: i32,
        y: i32,
        theta: i32,
        sonar: [u16; 3],
        delay_ms: f64,
        jitter_ms: f64,
        seq: u16,
    },
    Stats {
        commands_sent: u64,
        telemetry_received: u64,
        telemetry_lost: i64,
        late_drops: u64,
        jitter_ms: f64,
        rtt_ms: Option<f64>,
        /// "one-way" when a shared clock exists, otherwise "rtt/2".
        delay_basis: String,
    },
    Map {
        walls: Vec<[f64; 4]>,
        start: [f64; 3],
        goal: [f64; 2],
    },
}

/// Console line to robot command. Only `cmd`, `stop` and `estop` are
/// accepted from the console.
pub fn gateway_translate(line: &str) -> Result<Command, TeleopError> {
    let msg: ConsoleMessage =
        serde_json::from_str(line.trim()).map_err(|e| TeleopError::SchemaViolation(e.to_string()))?;
    match msg {
        ConsoleMessage::Cmd { v, w } => Ok(Command::Velocity { v, w }),
        ConsoleMessage::Stop => Ok(Command::Stop),
        ConsoleMessage::Estop => Ok(Command::EStop),
        other => Err(TeleopError::SchemaViolation(format!(
            "console may not send {}",
            serde_json::to_value(&other)
                .ok()
                .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_owned))
                .unwrap_or_default()
        ))),
    }
}

pub fn telemetry_message(t: &Telemetry, delay: Duration, jitter: Duration) -> ConsoleMessage {
    ConsoleMessage::Telemetry {
        x: t.x,
        y: t.y,
        theta: t.theta,
        sonar: t.sonar,
        delay_ms: delay.as_secs_f64() * 1000.0,
        jitter_ms: jitter.as_secs_f64() * 1000.0,
        seq: t.last_cmd_seq,
    }
}

pub fn map_message(map: &WallMap) -> ConsoleMessage {
    ConsoleMessage::Map {
        walls: map.walls.iter().map(|w| [w.x1, w.y1, w.x2, w.y2]).collect(),
        start: [map.start.x, map.start.y, map.start.theta],
        goal: [map.goal.0, map.goal.1],
    }
}

impl ConsoleMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("console messages serialize")
    }
}
