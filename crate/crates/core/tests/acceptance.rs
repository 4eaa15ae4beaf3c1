//! Acceptance run: one PASS/FAIL line per criterion. Oracles here are
//! written independently of the library code they check.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::metrics::FlowSample;
use teleop_core::netchan::{ImpairmentProfile, JitterModel, NetChannel};
use teleop_core::race::{run_scenario, Scenario};
use teleop_core::replicate::{replicate, run_replication, PacketLog, ReplicationConfig};
use teleop_core::robot::WallMap;
use teleop_core::session::{NtpTime, SourceState};
use teleop_core::teleop::{self, Command, Datagram, SessionIds, Telemetry, TeleopClient, TeleopConfig, TeleopServer};
use teleop_core::wire::{self, RtcpPacket, RtpPacket};

/// Criteria known not to hold for this model, with the reason. Their FAIL
/// line is still printed; an unexpected PASS is reported as an error too.
const KNOWN_UNMET: &[(&str, &str)] = &[(
    "scenario_a",
    "TCP jitter exceeds CBR jitter mainly after loss recovery, not in 90% of windows",
)];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("wire", wire_criterion),
        ("jitter", jitter_criterion),
        ("replicate", replicate_criterion),
        ("scenario_a", scenario_a_criterion),
        ("scenario_b", scenario_b_criterion),
        ("safety", safety_criterion),
        ("determinism", determinism_criterion),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {name}: {} [{:.2} s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        let known = KNOWN_UNMET.iter().find(|(k, _)| *k == name);
        match (out.pass, known) {
            (false, Some((_, why))) => println!("     known unmet: {why}"),
            (true, Some(_)) => {
                println!("     listed as unmet but passed; update KNOWN_UNMET");
                unexpected += 1;
            }
            (false, None) => unexpected += 1,
            (true, None) => {}
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(detail: &mut Vec<String>, ok: bool, what: String) -> bool {
    detail.push(if ok { what } else { format!("!{what}") });
    ok
}

// ---------------------------------------------------------------- wire

fn hex(s: &str) -> Vec<u8> {
    let s: String = s.split_whitespace().collect();
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

fn golden_vectors() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();

    // V=2 M=1 PT=96 seq=0x1234 ts=0xdeadbeef ssrc=0x01020304, payload 5 bytes
    let rtp = RtpPacket {
        marker: true,
        ..RtpPacket::new(96, 0x1234, 0xdead_beef, 0x0102_0304, vec![0, 0, 0x64, 0xff, 0x38])
    };
    let want = hex("80 e0 1234 deadbeef 01020304 00 0064 ff38");
    out.push((
        "rtp header",
        wire::encode_rtp(&rtp).ok() == Some(want.clone()) && wire::decode_rtp(&want).ok() == Some(rtp),
    ));

    // two CSRCs, no marker
    let rtp = RtpPacket {
        csrc: vec![0xaaaa_aaaa, 0xbbbb_bbbb],
        ..RtpPacket::new(97, 0xffff, 1, 2, vec![9])
    };
    let want = hex("82 61 ffff 00000001 00000002 aaaaaaaa bbbbbbbb 09");
    out.push((
        "rtp csrc",
        wire::encode_rtp(&rtp).ok() == Some(want.clone()) && wire::decode_rtp(&want).ok() == Some(rtp),
    ));

    // RR with one block: RC=1, PT=201, length 7 words
    let rr = RtcpPacket::ReceiverReport {
        ssrc: 0x1122_3344,
        reports: vec![wire::ReportBlock {
            source_ssrc: 0x5566_7788,
            fraction_lost: 0x40,
            cumulative_lost: -1,
            extended_highest_seq: 0x0001_0005,
            interarrival_jitter: 0x123,
            last_sr: 0xaabb_ccdd,
            delay_since_last_sr: 0x0001_0000,
        }],
    };
    let want = hex("81 c9 0007 11223344 55667788 40 ffffff 00010005 00000123 aabbccdd 00010000");
    let mut got = Vec::new();
    let enc = rr.encode(&mut got).is_ok() && got == want;
    out.push((
        "rtcp rr",
        enc && wire::decode_rtcp_compound(&want).ok() == Some(vec![rr]),
    ));

    // SR without blocks: RC=0, PT=200, length 6 words
    let sr = RtcpPacket::SenderReport {
        ssrc: 0xcafe_f00d,
        info: wire::SenderInfo {
            ntp_seconds: 0xe8f0_0000,
            ntp_fraction: 0x8000_0000,
            rtp_timestamp: 90_000,
            packet_count: 3,
            octet_count: 60,
        },
        reports: vec![],
    };
    let want = hex("80 c8 0006 cafef00d e8f00000 80000000 00015f90 00000003 0000003c");
    let mut got = Vec::new();
    let enc = sr.encode(&mut got).is_ok() && got == want;
    out.push((
        "rtcp sr",
        enc && wire::decode_rtcp_compound(&want).ok() == Some(vec![sr]),
    ));

    // command records: type, v (i16 BE), w (i16 BE)
    let cases = [
        (Command::Velocity { v: 100, w: -200 }, hex("00 0064 ff38")),
        (Command::Stop, hex("01 0000 0000")),
        (Command::EStop, hex("02 0000 0000")),
    ];
    let ok = cases
        .iter()
        .all(|(c, b)| teleop::encode_command(c).to_vec() == *b && teleop::decode_command(b).ok() == Some(*c));
    out.push(("command", ok));

    // telemetry: x, y, theta (i32 BE), three sonar u16, last command seq u16
    let t = Telemetry {
        x: 1000,
        y: -2,
        theta: 1571,
        sonar: [500, 0, 65535],
        last_cmd_seq: 0xbeef,
    };
    let want = hex("000003e8 fffffffe 00000623 01f4 0000 ffff beef");
    out.push((
        "telemetry",
        teleop::encode_telemetry(&t).to_vec() == want && teleop::decode_telemetry(&want).ok() == Some(t),
    ));
    out
}

fn rtp_strategy() -> impl Strategy<Value = RtpPacket> {
    (
        any::<bool>(),
        0u8..128,
        any::<u16>(),
        any::<u32>(),
        any::<u32>(),
        proptest::collection::vec(any::<u32>(), 0..16),
        proptest::collection::vec(any::<u8>(), 0..1400),
    )
        .prop_map(|(marker, pt, seq, ts, ssrc, csrc, payload)| RtpPacket {
            marker,
            csrc,
            ..RtpPacket::new(pt, seq, ts, ssrc, payload)
        })
}

fn wire_criterion() -> Outcome {
    let start = Instant::now();
    let golden = golden_vectors();
    let failed: Vec<_> = golden.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let roundtrip = runner.run(&rtp_strategy(), |pkt| {
        let bytes = wire::encode_rtp(&pkt).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(bytes.len(), 12 + 4 * pkt.csrc.len() + pkt.payload.len());
        prop_assert_eq!(wire::decode_rtp(&bytes).ok(), Some(pkt));
        Ok(())
    });
    let elapsed = start.elapsed();
    let mut d = Vec::new();
    let mut pass = check(
        &mut d,
        failed.is_empty(),
        format!("{}/{} golden vectors", golden.len() - failed.len(), golden.len()),
    );
    pass &= check(
        &mut d,
        roundtrip.is_ok(),
        match &roundtrip {
            Ok(()) => "10000 random packets round-trip".into(),
            Err(e) => format!("round-trip: {e}"),
        },
    );
    pass &= check(
        &mut d,
        elapsed < Duration::from_secs(10),
        format!("{:.2} s < 10 s", elapsed.as_secs_f64()),
    );
    if !failed.is_empty() {
        d.push(format!("mismatched: {}", failed.join(", ")));
    }
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

// -------------------------------------------------------------- jitter

/// Straight re-evaluation of the estimator, one packet at a time.
fn jitter_recurrence(arrivals_ns: &[u64], stamps: &[u32], rate: u32) -> Vec<f64> {
    let mut j = 0.0f64;
    let mut out = vec![0.0];
    for i in 1..arrivals_ns.len() {
        let a = arrivals_ns[i] as f64 * rate as f64 / 1e9;
        let b = arrivals_ns[i - 1] as f64 * rate as f64 / 1e9;
        let ts = stamps[i].wrapping_sub(stamps[i - 1]) as i32 as f64;
        let d = (a - b) - ts;
        j += (d.abs() - j) / 16.0;
        out.push(j);
    }
    out
}

/// Unrolled sum: J_n = sum_k (1/16) (15/16)^(n-k) |D_k|.
fn jitter_closed_form(arrivals_ns: &[u64], stamps: &[u32], rate: u32) -> f64 {
    let n = arrivals_ns.len();
    (1..n)
        .map(|k| {
            let a = arrivals_ns[k] as f64 * rate as f64 / 1e9;
            let b = arrivals_ns[k - 1] as f64 * rate as f64 / 1e9;
            let d = (a - b) - stamps[k].wrapping_sub(stamps[k - 1]) as i32 as f64;
            d.abs() / 16.0 * (15.0f64 / 16.0).powi((n - 1 - k) as i32)
        })
        .sum()
}

fn jitter_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a17);
    let mut mismatches = 0usize;
    let mut closed_worst = 0.0f64;
    let mut packets = 0usize;
    for _ in 0..100_000 {
        let rate = [1000u32, 8000, 90_000][rng.random_range(0..3)];
        let n = rng.random_range(2..40);
        let period_ns = rng.random_range(1_000_000u64..100_000_000);
        let max_transit = rng.random_range(1u64..300_000_000);
        let ts0: u32 = rng.random();
        // send in order, arrive in transit order
        let mut pkts: Vec<(u64, u16, u32)> = (0..n)
            .map(|i| {
                let sent = i as u64 * period_ns;
                let ts = ts0.wrapping_add((sent as u128 * rate as u128 / 1_000_000_000) as u32);
                (sent + rng.random_range(0..max_transit), i as u16, ts)
            })
            .collect();
        pkts.sort_by_key(|p| p.0);
        let arrivals: Vec<u64> = pkts.iter().map(|p| p.0).collect();
        let stamps: Vec<u32> = pkts.iter().map(|p| p.2).collect();
        let oracle = jitter_recurrence(&arrivals, &stamps, rate);

        let mut src = SourceState::new(1, rate).without_probation();
        for (i, &(arr, seq, ts)) in pkts.iter().enumerate() {
            src.on_receive_data(seq, ts, Duration::from_nanos(arr));
            if src.jitter_ticks() != oracle[i] {
                mismatches += 1;
            }
        }
        packets += n;
        let cf = jitter_closed_form(&arrivals, &stamps, rate);
        closed_worst = closed_worst.max((cf - oracle[n - 1]).abs() / (1.0 + cf));
    }

    // constant transit after a disturbance shaped like the replication
    // profile (43 ms, about 4 ms of spread) on the 1 kHz control clock
    let rate = teleop::CONTROL_CLOCK_RATE;
    let mut src = SourceState::new(2, rate).without_probation();
    let period = 50_000_000u64;
    let mut seq = 0u16;
    let mut feed = |src: &mut SourceState, i: u64, transit: u64| {
        let ts = (i * period * rate as u64 / 1_000_000_000) as u32;
        src.on_receive_data(seq, ts, Duration::from_nanos(i * period + transit));
        seq = seq.wrapping_add(1);
    };
    for i in 0..30 {
        feed(&mut src, i, rng.random_range(36_000_000..50_000_000));
    }
    let disturbed = src.jitter_ticks();
    let mut settled_after = None;
    let mut first = 0.0;
    for k in 0..200 {
        feed(&mut src, 30 + k, 43_000_000);
        if k == 0 {
            // still sees the step from the last disturbed transit
            first = src.jitter_ticks();
        }
        if settled_after.is_none() && src.jitter_ticks() < 1e-3 {
            settled_after = Some(k + 1);
        }
    }
    let after_200 = src.jitter_ticks();
    let geometric = first * (15.0f64 / 16.0).powi(199);

    let mut d = Vec::new();
    let mut pass = check(
        &mut d,
        mismatches == 0,
        format!("100000 sequences, {packets} packets, {mismatches} inexact"),
    );
    pass &= check(
        &mut d,
        closed_worst < 1e-9,
        format!("closed form within {closed_worst:.1e}"),
    );
    pass &= check(
        &mut d,
        after_200 < 1e-3 && disturbed > 1.0 && (after_200 - geometric).abs() <= 1e-9,
        format!(
            "constant transit: {disturbed:.2} -> {after_200:.2e} ticks after 200 packets (below 1e-3 after {})",
            settled_after.map_or("never".into(), |k| k.to_string())
        ),
    );
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

// ----------------------------------------------------------- replicate

fn oracle_jitter(logs: &[PacketLog]) -> Vec<f64> {
    let arrivals: Vec<u64> = logs.iter().map(|p| p.arrival.as_nanos() as u64).collect();
    let stamps: Vec<u32> = logs.iter().map(|p| p.rtp_timestamp).collect();
    jitter_recurrence(&arrivals, &stamps, logs[0].clock_rate)
}

fn replicate_criterion() -> Outcome {
    let start = Instant::now();
    let run = run_replication(&ReplicationConfig::standard(1));
    let elapsed = start.elapsed();
    let mut d = Vec::new();

    let dist = (run.final_pose.x - run.goal.0).hypot(run.final_pose.y - run.goal.1);
    let mut pass = check(&mut d, dist <= 300.0, format!("goal distance {dist:.1} mm <= 300"));

    let delays: Vec<f64> = run
        .telemetry
        .iter()
        .map(|p| (p.arrival.as_nanos() - p.sent.as_nanos()) as f64 / 1e6)
        .collect();
    let mean_delay = delays.iter().sum::<f64>() / delays.len() as f64;
    pass &= check(
        &mut d,
        !delays.is_empty() && (42.5..=43.5).contains(&mean_delay),
        format!(
            "mean delay {mean_delay:.3} ms in [42.5, 43.5] over {} packets",
            delays.len()
        ),
    );

    // The receiver's estimate must follow the recurrence over the packets it
    // actually saw. The first packet only primes the estimator.
    let oracle = oracle_jitter(&run.telemetry);
    let rate = run.telemetry[0].clock_rate as f64;
    let worst = run
        .telemetry
        .iter()
        .zip(&oracle)
        .skip(1)
        .map(|(p, o)| (p.jitter_ticks - o).abs())
        .fold(0.0f64, f64::max);
    let final_ms = run.final_jitter.as_secs_f64() * 1000.0;
    let oracle_final_ms = oracle[oracle.len() - 1] / rate * 1000.0;
    let mean_ms = oracle.iter().skip(1).sum::<f64>() / (oracle.len() - 1) as f64 / rate * 1000.0;
    pass &= check(
        &mut d,
        worst <= 1e-9 && (final_ms - oracle_final_ms).abs() <= 1e-6,
        format!(
            "session jitter {final_ms:.4} ms, oracle {oracle_final_ms:.4} ms (worst per-packet gap {worst:.1e} ticks)"
        ),
    );
    pass &= check(
        &mut d,
        (2.0..=6.0).contains(&mean_ms),
        format!("mean jitter {mean_ms:.3} ms in [2, 6]"),
    );
    pass &= check(
        &mut d,
        elapsed < Duration::from_secs(120),
        format!("{:.2} s < 120 s", elapsed.as_secs_f64()),
    );
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

// ---------------------------------------------------------- scenarios

/// Windows after `from`, keyed by window end in ms.
fn windows(samples: &[FlowSample], from: f64) -> BTreeMap<i64, BTreeMap<String, FlowSample>> {
    let mut w: BTreeMap<i64, BTreeMap<String, FlowSample>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.t > from + 1e-9) {
        w.entry((s.t * 1000.0).round() as i64)
            .or_default()
            .insert(s.flow.clone(), s.clone());
    }
    w
}

fn mean_throughput(w: &BTreeMap<i64, BTreeMap<String, FlowSample>>, flow: &str) -> f64 {
    let v: Vec<f64> = w
        .values()
        .filter_map(|m| m.get(flow))
        .map(|s| s.throughput_bps)
        .collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn scenario_a_criterion() -> Outcome {
    let start = Instant::now();
    let s = Scenario::preset_a(1);
    let out = run_scenario(&s).expect("scenario A runs");
    let elapsed = start.elapsed();
    let w = windows(&out.samples, 10.0);
    let mut d = Vec::new();
    let mut pass = true;
    for flow in ["rtp", "tcp", "udp"] {
        let m = mean_throughput(&w, flow);
        pass &= check(
            &mut d,
            (m - 0.5e6).abs() <= 0.05e6,
            format!("{flow} {:.0} kbps", m / 1000.0),
        );
    }
    let dominated = w
        .values()
        .filter(|m| match (m.get("tcp"), m.get("rtp"), m.get("udp")) {
            (Some(t), Some(r), Some(u)) => t.jitter_ms > r.jitter_ms && t.jitter_ms > u.jitter_ms,
            _ => false,
        })
        .count();
    let frac = dominated as f64 / w.len().max(1) as f64;
    pass &= check(
        &mut d,
        frac >= 0.9,
        format!(
            "tcp jitter highest in {dominated}/{} windows ({:.1}%, need 90%)",
            w.len(),
            frac * 100.0
        ),
    );
    pass &= check(
        &mut d,
        elapsed < Duration::from_secs(30),
        format!("{:.2} s < 30 s", elapsed.as_secs_f64()),
    );
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

fn scenario_b_criterion() -> Outcome {
    let start = Instant::now();
    let s = Scenario::preset_b(1);
    let out = run_scenario(&s).expect("scenario B runs");
    let elapsed = start.elapsed();
    let w = windows(&out.samples, 10.0);
    let starved = w
        .values()
        .filter(|m| m.get("tcp").is_some_and(|t| t.throughput_bps < 0.05 * 1.5e6))
        .count();
    let frac = starved as f64 / w.len().max(1) as f64;
    let rtp = mean_throughput(&w, "rtp");
    let udp = mean_throughput(&w, "udp");
    let mut d = Vec::new();
    let mut pass = check(
        &mut d,
        frac >= 0.9,
        format!(
            "tcp below 75 kbps in {starved}/{} windows ({:.1}%)",
            w.len(),
            frac * 100.0
        ),
    );
    pass &= check(
        &mut d,
        rtp > 0.0 && (rtp - udp).abs() <= 0.1 * rtp.max(udp),
        format!("rtp {:.0} kbps vs udp {:.0} kbps", rtp / 1000.0, udp / 1000.0),
    );
    pass &= check(
        &mut d,
        elapsed < Duration::from_secs(30),
        format!("{:.2} s < 30 s", elapsed.as_secs_f64()),
    );
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

// -------------------------------------------------------------- safety

fn random_profile(rng: &mut ChaCha8Rng) -> ImpairmentProfile {
    let ms = |rng: &mut ChaCha8Rng, hi: u64| Duration::from_micros(rng.random_range(0..hi * 1000));
    ImpairmentProfile {
        base_delay: ms(rng, 300),
        jitter: match rng.random_range(0..3) {
            0 => JitterModel::None,
            1 => JitterModel::Uniform(ms(rng, 150)),
            _ => JitterModel::Gaussian(ms(rng, 60)),
        },
        loss_prob: if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..0.6)
        },
        dup_prob: rng.random_range(0.0..0.3),
        rate_bps: if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(5_000.0..1e6)
        },
        queue_capacity: rng.random_range(1..200),
        seed: rng.random(),
    }
}

fn random_command(rng: &mut ChaCha8Rng) -> Command {
    match rng.random_range(0..20) {
        0..=13 => Command::Velocity {
            v: rng.random_range(-600..=600),
            w: rng.random_range(-3000..=3000),
        },
        14..=17 => Command::Stop,
        _ => Command::EStop,
    }
}

struct SafetyCase {
    violations: usize,
    commands_arrived: usize,
}

fn safety_case(seed: u64, map: &Arc<WallMap>, cfg: &TeleopConfig) -> SafetyCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = SessionIds::from_seed(seed);
    let wall = NtpTime::from_unix(Duration::from_secs(1_700_000_000));
    let mut server = TeleopServer::new(Arc::clone(map), *cfg, ids, wall);
    let mut client = TeleopClient::new(cfg, ids, wall);
    let mut uplink = NetChannel::new(random_profile(&mut rng));
    let watchdog = cfg.teleop.watchdog();
    let tick = cfg.teleop.tick_period();

    let mut schedule = Vec::new();
    let mut t = Duration::from_millis(rng.random_range(0..200));
    for _ in 0..rng.random_range(1..40) {
        schedule.push((t, random_command(&mut rng)));
        t += match rng.random_range(0..4) {
            0 => Duration::from_millis(rng.random_range(0..20)),
            1 | 2 => Duration::from_millis(rng.random_range(20..300)),
            _ => Duration::from_millis(rng.random_range(300..1500)),
        };
    }
    let end = schedule.last().unwrap().0 + Duration::from_secs(2);

    let mut next_send = 0;
    let mut next_tick = Duration::ZERO;
    let mut last_arrival: Option<Duration> = None;
    let mut settled: Option<(f64, f64, f64)> = None;
    let mut out = SafetyCase {
        violations: 0,
        commands_arrived: 0,
    };
    while next_tick <= end {
        let send_at = schedule.get(next_send).map(|s| s.0);
        let now = [Some(next_tick), send_at, uplink.next_delivery()]
            .into_iter()
            .flatten()
            .min()
            .unwrap();
        if send_at == Some(now) {
            let d = client.send_command(schedule[next_send].1, now);
            uplink.submit(d.to_frame(), now);
            next_send += 1;
        }
        for (frame, at) in uplink.poll_deliveries(now) {
            let d = Datagram::from_frame(&frame).expect("tagged frame");
            if !d.rtcp {
                last_arrival = Some(at);
                out.commands_arrived += 1;
            }
            server.receive(&d, at);
        }
        if now == next_tick {
            server.tick(now);
            next_tick += tick;
            let pose = server.pose();
            let expired = last_arrival.is_none_or(|a| now > a + watchdog);
            if expired {
                let here = (pose.x, pose.y, pose.theta);
                let moved = settled.is_some_and(|s| s != here);
                if pose.v != 0.0 || pose.w != 0.0 || moved {
                    out.violations += 1;
                }
                settled = Some(here);
            } else {
                settled = None;
            }
        }
    }
    out
}

fn safety_criterion() -> Outcome {
    let map = Arc::new(WallMap::replication());
    let cfg = TeleopConfig::default();
    let mut violations = 0;
    let mut bad_cases = Vec::new();
    let mut arrived = 0;
    for seed in 0..1000u64 {
        let c = safety_case(seed, &map, &cfg);
        arrived += c.commands_arrived;
        if c.violations > 0 {
            violations += c.violations;
            bad_cases.push(seed);
        }
    }
    let mut d = Vec::new();
    let pass = check(
        &mut d,
        violations == 0,
        format!("1000 schedules, {arrived} command packets delivered, {violations} ticks moving past the watchdog"),
    );
    if !bad_cases.is_empty() {
        d.push(format!("failing seeds {:?}", &bad_cases[..bad_cases.len().min(10)]));
    }
    Outcome {
        pass,
        detail: d.join("; "),
    }
}

// --------------------------------------------------------- determinism

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".csv") || name.ends_with(".txt") {
            out.insert(name, std::fs::read(&p).unwrap());
        }
    }
    out
}

fn determinism_criterion() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    replicate(1, a.path()).expect("first replicate run");
    replicate(1, b.path()).expect("second replicate run");
    let fa = artifacts(a.path());
    let fb = artifacts(b.path());
    let differing: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).cloned().collect();
    let mut d = Vec::new();
    let pass = check(
        &mut d,
        fa.len() >= 5 && fa.contains_key("verdict.txt") && fa.keys().eq(fb.keys()) && differing.is_empty(),
        format!(
            "{} files compared, {} differ {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    );
    Outcome {
        pass,
        detail: d.join("; "),
    }
}
