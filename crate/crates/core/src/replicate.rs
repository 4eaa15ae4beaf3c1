//! End-to-end replication: the scripted operator drives the simulated robot
//! through impaired channels on a virtual clock, then the protocol race
//! scenarios run, and the results are checked against their targets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::metrics::{self, FlowSample, MetricsError, PacketObservation};
use crate::netchan::{ImpairmentProfile, NetChannel};
use crate::pilot::{parse_waypoints, Pilot, PilotConfig};
use crate::race::{self, RaceError, RaceOutcome, Scenario};
use crate::robot::{RobotPose, WallMap, REPLICATION_WAYPOINTS};
use crate::session::NtpTime;
use crate::teleop::{Datagram, SessionIds, Stream, TeleopClient, TeleopConfig, TeleopServer};
use crate::wire;

pub const GOAL_TOLERANCE_MM: f64 = 300.0;
pub const DELAY_BAND_MS: (f64, f64) = (42.5, 43.5);
pub const JITTER_BAND_MS: (f64, f64) = (2.0, 6.0);
/// Jitter ceiling for acceptable video streaming.
pub const VIDEO_JITTER_MS: f64 = 15.0;

#[derive(Debug, Clone)]
pub struct ReplicationConfig {
    pub seed: u64,
    pub uplink: ImpairmentProfile,
    pub downlink: ImpairmentProfile,
    pub teleop: TeleopConfig,
    pub map: Arc<WallMap>,
    pub waypoints: Vec<(f64, f64)>,
    pub pilot: PilotConfig,
    pub command_period: Duration,
    /// Give up after this much virtual time.
    pub time_limit: Duration,
    /// Keep running this long after the operator reports arrival.
    pub settle: Duration,
}

impl ReplicationConfig {
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            uplink: ImpairmentProfile::replication(seed.wrapping_mul(2)),
            downlink: ImpairmentProfile::replication(seed.wrapping_mul(2) + 1),
            teleop: TeleopConfig::default(),
            map: Arc::new(WallMap::replication()),
            waypoints: parse_waypoints(REPLICATION_WAYPOINTS).expect("shipped waypoints parse"),
            pilot: PilotConfig::default(),
            command_period: Duration::from_millis(100),
            time_limit: Duration::from_secs(600),
            settle: Duration::from_secs(1),
        }
    }
}

/// One telemetry or command packet as it crossed the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketLog {
    pub stream: Stream,
    pub sequence: u16,
    pub rtp_timestamp: u32,
    pub sent: Duration,
    pub arrival: Duration,
    pub size: usize,
    /// Receiver's jitter estimate after this packet, in ticks.
    pub jitter_ticks: f64,
    pub clock_rate: u32,
}

impl PacketLog {
    pub fn delay(&self) -> Duration {
        self.arrival - self.sent
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationRun {
    pub final_pose: RobotPose,
    pub goal: (f64, f64),
    pub goal_distance_mm: f64,
    pub arrived: bool,
    pub elapsed: Duration,
    pub telemetry: Vec<PacketLog>,
    pub commands: Vec<PacketLog>,
    /// Receiver jitter estimate for telemetry at the end of the run.
    pub final_jitter: Duration,
    pub watchdog_trips: u64,
    pub media_frames_ok: u64,
    pub media_frames_corrupt: u64,
}

impl ReplicationRun {
    pub fn goal_reached(&self) -> bool {
        self.goal_distance_mm <= GOAL_TOLERANCE_MM
    }

    pub fn mean_delay_ms(logs: &[PacketLog]) -> f64 {
        logs.iter().map(|p| p.delay().as_secs_f64() * 1000.0).sum::<f64>() / logs.len().max(1) as f64
    }

    pub fn mean_jitter_ms(logs: &[PacketLog]) -> f64 {
        logs.iter()
            .map(|p| p.jitter_ticks * 1000.0 / p.clock_rate as f64)
            .sum::<f64>()
            / logs.len().max(1) as f64
    }

    /// Per-packet rows; `drops` counts sequence numbers skipped before the
    /// packet.
    pub fn packet_samples(&self) -> Vec<FlowSample> {
        let mut out = Vec::new();
        for (flow, logs) in [("telemetry", &self.telemetry), ("command", &self.commands)] {
            for obs in observations(logs) {
                out.push(FlowSample {
                    t: obs.arrival,
                    flow: flow.to_string(),
                    throughput_bps: 0.0,
                    delay_ms: obs.delay_ms,
                    jitter_ms: obs.jitter_ms,
                    drops: obs.lost_before,
                });
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.flow.cmp(&b.flow)));
        out
    }

    /// 10 Hz windowed series per flow.
    pub fn window_samples(&self, period: f64) -> Vec<FlowSample> {
        let end = (self.elapsed.as_secs_f64() / period).floor() * period;
        let mut out = metrics::window("telemetry", &observations(&self.telemetry), period, end);
        out.extend(metrics::window("command", &observations(&self.commands), period, end));
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.flow.cmp(&b.flow)));
        out
    }
}

fn observations(logs: &[PacketLog]) -> Vec<PacketObservation> {
    let mut out = Vec::with_capacity(logs.len());
    let mut prev: Option<u16> = None;
    for p in logs {
        let lost_before = match prev {
            Some(s) => p.sequence.wrapping_sub(s).wrapping_sub(1).min(0x7fff) as u64,
            None => 0,
        };
        prev = Some(p.sequence);
        out.push(PacketObservation {
            arrival: p.arrival.as_secs_f64(),
            bytes: p.size,
            delay_ms: p.delay().as_secs_f64() * 1000.0,
            jitter_ms: p.jitter_ticks * 1000.0 / p.clock_rate as f64,
            lost_before,
        });
    }
    out
}

/// Drives the operator loop to completion.
pub fn run_replication(cfg: &ReplicationConfig) -> ReplicationRun {
    let ids = SessionIds::from_seed(cfg.seed);
    let wall = NtpTime::default();
    let mut server = TeleopServer::new(Arc::clone(&cfg.map), cfg.teleop, ids, wall);
    let mut client = TeleopClient::new(&cfg.teleop, ids, wall);
    client.set_shared_clock(server.telemetry_session().sender().initial_timestamp(), Duration::ZERO);
    let mut uplink = NetChannel::new(cfg.uplink.clone());
    let mut downlink = NetChannel::new(cfg.downlink.clone());
    let mut pilot = Pilot::new(cfg.waypoints.clone(), cfg.pilot);

    let tick = cfg.teleop.teleop.tick_period();
    let mut next_tick = Duration::ZERO;
    let mut next_command = Duration::ZERO;
    let mut sent_at: HashMap<(Stream, u16), (Duration, u32)> = HashMap::new();
    let mut telemetry = Vec::new();
    let mut commands = Vec::new();
    let mut latest_pose: Option<RobotPose> = None;
    let mut arrived_at: Option<Duration> = None;
    let mut now = Duration::ZERO;

    let note_sent = |d: &Datagram, now: Duration, sent_at: &mut HashMap<_, _>| {
        if !d.rtcp && d.stream != Stream::Media {
            if let Ok(p) = wire::decode_rtp(&d.bytes) {
                sent_at.insert((d.stream, p.sequence), (now, p.timestamp));
            }
        }
    };

    while now <= cfg.time_limit {
        for (frame, at) in uplink.poll_deliveries(now) {
            let Some(d) = Datagram::from_frame(&frame) else {
                continue;
            };
            server.receive(&d, at);
            if !d.rtcp {
                if let Ok(p) = wire::decode_rtp(&d.bytes) {
                    if let Some(&(sent, ts)) = sent_at.get(&(Stream::Command, p.sequence)) {
                        let jitter = server
                            .command_session()
                            .source(p.ssrc)
                            .map_or(0.0, |s| s.jitter_ticks());
                        commands.push(PacketLog {
                            stream: Stream::Command,
                            sequence: p.sequence,
                            rtp_timestamp: ts,
                            sent,
                            arrival: at,
                            size: d.bytes.len(),
                            jitter_ticks: jitter,
                            clock_rate: crate::teleop::CONTROL_CLOCK_RATE,
                        });
                    }
                }
            }
        }
        for (frame, at) in downlink.poll_deliveries(now) {
            let Some(d) = Datagram::from_frame(&frame) else {
                continue;
            };
            client.receive(&d, at);
            if !d.rtcp && d.stream == Stream::Telemetry {
                if let Ok(p) = wire::decode_rtp(&d.bytes) {
                    if let Some(&(sent, ts)) = sent_at.get(&(Stream::Telemetry, p.sequence)) {
                        let jitter = client
                            .telemetry_session()
                            .source(p.ssrc)
                            .map_or(0.0, |s| s.jitter_ticks());
                        telemetry.push(PacketLog {
                            stream: Stream::Telemetry,
                            sequence: p.sequence,
                            rtp_timestamp: ts,
                            sent,
                            arrival: at,
                            size: d.bytes.len(),
                            jitter_ticks: jitter,
                            clock_rate: crate::teleop::CONTROL_CLOCK_RATE,
                        });
                    }
                }
            }
        }
        if now == next_tick {
            for d in server.tick(now) {
                note_sent(&d, now, &mut sent_at);
                downlink.submit(d.to_frame(), now);
            }
            next_tick += tick;
        }
        if now == next_command {
            for ev in client.poll(now) {
                latest_pose = Some(ev.telemetry.pose());
            }
            if let Some(pose) = latest_pose {
                let cmd = pilot.steer(&pose);
                let d = client.send_command(cmd, now);
                note_sent(&d, now, &mut sent_at);
                uplink.submit(d.to_frame(), now);
            }
            for d in client.poll_rtcp(now) {
                uplink.submit(d.to_frame(), now);
            }
            if pilot.arrived() && arrived_at.is_none() {
                arrived_at = Some(now);
            }
            next_command += cfg.command_period;
        }
        if arrived_at.is_some_and(|t| now >= t + cfg.settle) {
            break;
        }
        now = [
            Some(next_tick),
            Some(next_command),
            uplink.next_delivery(),
            downlink.next_delivery(),
        ]
        .into_iter()
        .flatten()
        .min()
        .expect("ticks are always scheduled");
    }

    let pose = server.pose();
    let goal = cfg.map.goal;
    let stats = client.stats();
    ReplicationRun {
        final_pose: pose,
        goal,
        goal_distance_mm: pose.distance_to(goal.0, goal.1),
        arrived: pilot.arrived(),
        elapsed: now,
        telemetry,
        commands,
        final_jitter: stats.telemetry_jitter,
        watchdog_trips: server.stats().watchdog_trips,
        media_frames_ok: stats.media_frames_ok,
        media_frames_corrupt: stats.media_frames_corrupt,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub facts: Vec<(&'static str, String)>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        for (k, v) in &self.facts {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push('\n');
        for c in &self.checks {
            let _ = writeln!(out, "{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(out, "\nverdict = {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

fn within(v: f64, band: (f64, f64)) -> bool {
    v >= band.0 && v <= band.1
}

/// Scenario A/B checks on a race outcome.
pub fn scenario_a_checks(s: &Scenario, out: &RaceOutcome) -> Vec<Check> {
    let st = race::steady_state(&out.samples, s.warmup);
    let mut checks = Vec::new();
    let target = 0.5e6;
    let mut detail = String::new();
    let mut fair = true;
    for (flow, v) in &st {
        let ok = (v.mean_throughput_bps - target).abs() <= 0.1 * target;
        fair &= ok;
        let _ = write!(detail, "{flow} {:.0} bps; ", v.mean_throughput_bps);
    }
    checks.push(Check {
        name: "race_a.fair_share",
        pass: fair && st.len() == 3,
        detail: detail.trim_end_matches("; ").to_string(),
    });
    let dominance = race::window_fraction(&out.samples, s.warmup, |w| {
        match (w.get("tcp"), w.get("rtp"), w.get("udp")) {
            (Some(t), Some(r), Some(u)) => t.jitter_ms > r.jitter_ms && t.jitter_ms > u.jitter_ms,
            _ => false,
        }
    });
    checks.push(Check {
        name: "race_a.tcp_jitter_dominance",
        pass: dominance >= 0.9,
        detail: format!(
            "{:.1}% of windows (tcp mean {:.2} ms, rtp {:.2} ms, udp {:.2} ms)",
            dominance * 100.0,
            st.get("tcp").map_or(0.0, |v| v.mean_jitter_ms),
            st.get("rtp").map_or(0.0, |v| v.mean_jitter_ms),
            st.get("udp").map_or(0.0, |v| v.mean_jitter_ms),
        ),
    });
    checks
}

pub fn scenario_b_checks(s: &Scenario, out: &RaceOutcome) -> Vec<Check> {
    let st = race::steady_state(&out.samples, s.warmup);
    let starved = race::window_fraction(&out.samples, s.warmup, |w| {
        w.get("tcp").is_some_and(|t| t.throughput_bps < 0.05 * s.link_rate)
    });
    let rtp = st.get("rtp").map_or(0.0, |v| v.mean_throughput_bps);
    let udp = st.get("udp").map_or(0.0, |v| v.mean_throughput_bps);
    vec![
        Check {
            name: "race_b.tcp_starved",
            pass: starved >= 0.9,
            detail: format!("{:.1}% of windows below 5% of link", starved * 100.0),
        },
        Check {
            name: "race_b.rtp_udp_parity",
            pass: rtp > 0.0 && (rtp - udp).abs() <= 0.1 * rtp.max(udp),
            detail: format!("rtp {rtp:.0} bps, udp {udp:.0} bps"),
        },
    ]
}

pub fn replication_checks(run: &ReplicationRun) -> Vec<Check> {
    let delay = ReplicationRun::mean_delay_ms(&run.telemetry);
    let jitter = ReplicationRun::mean_jitter_ms(&run.telemetry);
    vec![
        Check {
            name: "replication.goal",
            pass: run.goal_reached(),
            detail: format!(
                "{:.1} mm from goal after {:.1} s",
                run.goal_distance_mm,
                run.elapsed.as_secs_f64()
            ),
        },
        Check {
            name: "replication.mean_delay",
            pass: within(delay, DELAY_BAND_MS),
            detail: format!("{delay:.3} ms"),
        },
        Check {
            name: "replication.mean_jitter",
            pass: within(jitter, JITTER_BAND_MS) && jitter < VIDEO_JITTER_MS,
            detail: format!("{jitter:.3} ms"),
        },
    ]
}

#[derive(Debug, thiserror::Error)]
pub enum ReplicateError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Race(#[from] RaceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything `replicate` writes.
#[derive(Debug, Clone)]
pub struct ReplicateArtifacts {
    pub verdict: Verdict,
    pub files: Vec<PathBuf>,
}

/// Runs the replication and both race scenarios, writing CSVs, figures and
/// the verdict into `out_dir`.
pub fn replicate(seed: u64, out_dir: &Path) -> Result<ReplicateArtifacts, ReplicateError> {
    std::fs::create_dir_all(out_dir)?;
    let run = run_replication(&ReplicationConfig::standard(seed));
    let a = Scenario::preset_a(seed);
    let b = Scenario::preset_b(seed);
    let race_a = race::run_scenario(&a)?;
    let race_b = race::run_scenario(&b)?;

    let mut files = Vec::new();
    let mut write = |name: &str, samples: &[FlowSample]| -> Result<(), MetricsError> {
        let path = out_dir.join(name);
        metrics::write_csv(&path, samples)?;
        files.push(path);
        Ok(())
    };
    write("replication_packets.csv", &run.packet_samples())?;
    let windows = run.window_samples(0.1);
    write("replication.csv", &windows)?;
    write("race_a.csv", &race_a.samples)?;
    write("race_b.csv", &race_b.samples)?;
    files.extend(metrics::render(&windows, &out_dir.join("figures"))?);

    let mut checks = replication_checks(&run);
    checks.extend(scenario_a_checks(&a, &race_a));
    checks.extend(scenario_b_checks(&b, &race_b));
    let verdict = Verdict {
        seed,
        facts: vec![
            ("goal_reached", run.goal_reached().to_string()),
            ("goal_distance_mm", format!("{:.1}", run.goal_distance_mm)),
            ("elapsed_s", format!("{:.1}", run.elapsed.as_secs_f64())),
            (
                "mean_delay_ms",
                format!("{:.3}", ReplicationRun::mean_delay_ms(&run.telemetry)),
            ),
            (
                "mean_jitter_ms",
                format!("{:.3}", ReplicationRun::mean_jitter_ms(&run.telemetry)),
            ),
            (
                "final_jitter_ms",
                format!("{:.3}", run.final_jitter.as_secs_f64() * 1000.0),
            ),
            ("telemetry_packets", run.telemetry.len().to_string()),
            ("command_packets", run.commands.len().to_string()),
            ("watchdog_trips", run.watchdog_trips.to_string()),
            ("race_rtcp_mismatches", race_a.rtcp.mismatches.to_string()),
        ],
        checks,
    };
    let path = out_dir.join("verdict.txt");
    std::fs::write(&path, verdict.render())?;
    files.push(path);
    Ok(ReplicateArtifacts { verdict, files })
}
