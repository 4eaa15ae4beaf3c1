use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use teleop_core::netchan::{ImpairmentProfile, JitterModel, NetChannel};
use teleop_core::race::Scenario;
use teleop_core::robot::WallMap;
use teleop_core::session::NtpTime;
use teleop_core::teleop::{Command, Datagram, SessionIds, TeleopClient, TeleopConfig, TeleopServer};

fn scenarios() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios"))
}

#[test]
fn shipped_scenarios_match_presets() {
    assert_eq!(
        Scenario::load(&scenarios().join("race_a.toml")).unwrap(),
        Scenario::preset_a(1)
    );
    assert_eq!(
        Scenario::load(&scenarios().join("race_b.toml")).unwrap(),
        Scenario::preset_b(1)
    );
}

#[test]
fn shipped_netsim_profile_is_the_replication_link() {
    let p = ImpairmentProfile::load(&scenarios().join("replication.netsim.toml")).unwrap();
    assert_eq!(p, ImpairmentProfile::replication(0));
}

#[test]
fn shipped_map_is_the_replication_map() {
    assert_eq!(
        WallMap::load(&scenarios().join("lab.map")).unwrap(),
        WallMap::replication()
    );
}

struct Rig {
    server: TeleopServer,
    client: TeleopClient,
    uplink: NetChannel,
}

fn rig(profile: ImpairmentProfile) -> Rig {
    let cfg = TeleopConfig::default();
    let ids = SessionIds::from_seed(profile.seed);
    let wall = NtpTime::from_unix(Duration::from_secs(1_700_000_000));
    Rig {
        server: TeleopServer::new(Arc::new(WallMap::replication()), cfg, ids, wall),
        client: TeleopClient::new(&cfg, ids, wall),
        uplink: NetChannel::new(profile),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Reordering, duplication and loss never make the robot go back to an
    /// older command, and whatever it executes was actually sent.
    #[test]
    fn applied_commands_never_regress(
        seed: u64,
        spread_ms in 0u64..120,
        loss in 0.0f64..0.4,
        dup in 0.0f64..0.3,
        gaps in prop::collection::vec(1u64..80, 5..80),
    ) {
        let mut r = rig(ImpairmentProfile {
            base_delay: Duration::from_millis(20),
            jitter: JitterModel::Uniform(Duration::from_millis(spread_ms)),
            loss_prob: loss,
            dup_prob: dup,
            seed,
            ..ImpairmentProfile::default()
        });
        let mut sent = HashSet::new();
        let mut sends = Vec::new();
        let mut t = Duration::ZERO;
        for (i, g) in gaps.iter().enumerate() {
            t += Duration::from_millis(*g);
            sends.push((t, i as i16 * 3 + 10));
        }
        let end = t + Duration::from_secs(1);
        let mut last = None;
        let mut now = Duration::ZERO;
        let mut next = 0;
        while now <= end {
            while next < sends.len() && sends[next].0 <= now {
                let v = sends[next].1;
                sent.insert(v);
                let d = r.client.send_command(Command::Velocity { v, w: 0 }, now);
                r.uplink.submit(d.to_frame(), now);
                next += 1;
            }
            for (frame, at) in r.uplink.poll_deliveries(now) {
                r.server.receive(&Datagram::from_frame(&frame).unwrap(), at);
                prop_assert!(r.server.last_applied() >= last);
                last = r.server.last_applied();
            }
            r.server.tick(now);
            prop_assert!(r.server.last_applied() >= last);
            last = r.server.last_applied();
            let v = r.server.pose().v;
            prop_assert!(v == 0.0 || sent.contains(&(v as i16)), "executing unsent v {}", v);
            now += Duration::from_millis(5);
        }
    }
}

#[test]
fn redundancy_recovers_isolated_losses() {
    // every other packet lost: each survivor still carries the previous command
    let mut r = rig(ImpairmentProfile::default());
    let mut now = Duration::ZERO;
    for i in 0..20i16 {
        let d = r.client.send_command(Command::Velocity { v: 100 + i, w: 0 }, now);
        if i % 2 == 1 {
            r.server.receive(&d, now);
        }
        now += Duration::from_millis(50);
        r.server.tick(now);
    }
    // probation swallows the first survivor; the rest bring two records each
    assert!(r.server.stats().commands_applied >= 17, "{:?}", r.server.stats());
    assert_eq!(r.server.pose().v, 119.0);
}

#[test]
fn estop_latches_until_stop() {
    let mut r = rig(ImpairmentProfile::default());
    let mut now = Duration::ZERO;
    let send = |r: &mut Rig, cmd, now: &mut Duration| {
        let d = r.client.send_command(cmd, *now);
        r.server.receive(&d, *now);
        *now += Duration::from_millis(50);
        r.server.tick(*now);
    };
    for _ in 0..3 {
        send(&mut r, Command::Velocity { v: 200, w: 0 }, &mut now);
    }
    assert_eq!(r.server.pose().v, 200.0);
    send(&mut r, Command::EStop, &mut now);
    send(&mut r, Command::Velocity { v: 200, w: 0 }, &mut now);
    assert_eq!(r.server.pose().v, 0.0);
    assert!(r.server.stats().estop_latched);
    send(&mut r, Command::Stop, &mut now);
    send(&mut r, Command::Velocity { v: 150, w: 0 }, &mut now);
    assert_eq!(r.server.pose().v, 150.0);
}
