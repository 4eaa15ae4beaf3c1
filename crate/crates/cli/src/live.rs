//! Real-time operation over UDP: the robot server and the scripted remote
//! operator. Each loop owns its state on one thread; sockets, impairment
//! channels and the console talk to it through channels.

use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use teleop_core::metrics::{CsvSink, FlowSample};
use teleop_core::netchan::{ImpairmentProfile, LiveChannel};
use teleop_core::pilot::{Pilot, PilotConfig};
use teleop_core::robot::WallMap;
use teleop_core::session::NtpTime;
use teleop_core::teleop::{
    map_message, telemetry_message, Command, ConsoleMessage, Datagram, SessionIds, Stream, TeleopClient, TeleopConfig,
    TeleopServer,
};
use teleop_core::wire;
use tokio::sync::broadcast;

use crate::gateway::{self, Gateway};

const STREAMS: [Stream; 3] = [Stream::Command, Stream::Telemetry, Stream::Media];
const POLL: Duration = Duration::from_millis(200);

/// Offset of a stream's socket from the base port: RTP on even, RTCP on odd.
fn port_offset(stream: Stream, rtcp: bool) -> u16 {
    let k = match stream {
        Stream::Command => 0,
        Stream::Telemetry => 2,
        Stream::Media => 4,
    };
    k + rtcp as u16
}

struct Sockets {
    /// Indexed by port offset.
    socks: Vec<UdpSocket>,
}

impl Sockets {
    fn bind(ip: IpAddr, base: u16) -> Result<Self> {
        let mut socks = Vec::with_capacity(6);
        for off in 0..6u16 {
            let addr = SocketAddr::new(ip, base + off);
            let s = UdpSocket::bind(addr).with_context(|| format!("binding {addr}"))?;
            s.set_read_timeout(Some(POLL))?;
            socks.push(s);
        }
        Ok(Self { socks })
    }

    fn clone_all(&self) -> Result<Vec<UdpSocket>> {
        Ok(self
            .socks
            .iter()
            .map(UdpSocket::try_clone)
            .collect::<std::io::Result<_>>()?)
    }

    /// One reader thread per socket; `on_datagram` receives the tagged
    /// datagram and its source.
    fn spawn_readers<F>(&self, stop: Arc<AtomicBool>, on_datagram: F) -> Result<()>
    where
        F: Fn(Datagram, SocketAddr) + Send + Clone + 'static,
    {
        for (off, sock) in self.clone_all()?.into_iter().enumerate() {
            let stream = STREAMS[off / 2];
            let rtcp = off % 2 == 1;
            let stop = Arc::clone(&stop);
            let f = on_datagram.clone();
            thread::Builder::new().name(format!("udp-{off}")).spawn(move || {
                let mut buf = vec![0u8; 65_536];
                while !stop.load(Ordering::Relaxed) {
                    match sock.recv_from(&mut buf) {
                        Ok((n, from)) => f(
                            Datagram {
                                stream,
                                rtcp,
                                bytes: buf[..n].to_vec(),
                            },
                            from,
                        ),
                        Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                        }
                        Err(e) => {
                            log::error!("udp socket {off}: {e}");
                            break;
                        }
                    }
                }
            })?;
        }
        Ok(())
    }
}

fn send_to(socks: &[UdpSocket], d: &Datagram, host: IpAddr, base: u16) {
    let off = port_offset(d.stream, d.rtcp);
    if let Err(e) = socks[off as usize].send_to(&d.bytes, SocketAddr::new(host, base + off)) {
        log::debug!("send to {host}:{}: {e}", base + off);
    }
}

pub struct ServeOptions {
    pub config: TeleopConfig,
    pub map: Arc<WallMap>,
    pub profile: ImpairmentProfile,
    pub bind: IpAddr,
    pub base_port: u16,
    pub gateway: Option<SocketAddr>,
    pub assets: Option<PathBuf>,
    pub duration: Option<Duration>,
    pub seed: u64,
}

enum ToServer {
    Frame(Vec<u8>),
    Shutdown,
}

enum Egress {
    Frame(Vec<u8>),
    Operator(IpAddr, u16),
    Shutdown,
}

enum ToGateway {
    Frame(Vec<u8>),
    Command(Command),
    Shutdown,
}

pub fn serve(opts: ServeOptions) -> Result<()> {
    let origin = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let ids = SessionIds::from_seed(opts.seed);
    let wall = NtpTime::now();
    let mut server = TeleopServer::new(Arc::clone(&opts.map), opts.config, ids, wall);
    let sockets = Sockets::bind(opts.bind, opts.base_port)?;
    log::info!("serving on {}:{}-{}", opts.bind, opts.base_port, opts.base_port + 5);

    let (to_server, server_rx) = mpsc::channel::<ToServer>();
    let (egress_tx, egress_rx) = mpsc::channel::<Egress>();
    let (gw_tx, gw_rx) = mpsc::channel::<ToGateway>();

    let uplink = {
        let to_server = to_server.clone();
        LiveChannel::spawn(opts.profile.clone(), move |frame| {
            let _ = to_server.send(ToServer::Frame(frame));
        })
    };
    let downlink = {
        let egress_tx = egress_tx.clone();
        LiveChannel::spawn(
            ImpairmentProfile {
                seed: opts.profile.seed.wrapping_add(1),
                ..opts.profile.clone()
            },
            move |frame| {
                let _ = egress_tx.send(Egress::Frame(frame));
            },
        )
    };

    {
        let uplink = uplink.clone();
        let egress_tx = egress_tx.clone();
        sockets.spawn_readers(Arc::clone(&stop), move |d, from| {
            if d.stream == Stream::Command && !d.rtcp {
                let _ = egress_tx.send(Egress::Operator(from.ip(), from.port()));
            }
            uplink.submit(d.to_frame());
        })?;
    }

    // egress: UDP to the remote operator, frames to the console client
    let out_socks = sockets.clone_all()?;
    let gateway_enabled = opts.gateway.is_some();
    let gw_frames = gw_tx.clone();
    let egress = thread::Builder::new().name("egress".into()).spawn(move || {
        let mut operator: Option<(IpAddr, u16)> = None;
        while let Ok(msg) = egress_rx.recv() {
            match msg {
                Egress::Operator(ip, port) => {
                    if operator != Some((ip, port)) {
                        log::info!("operator at {ip}:{port}");
                        operator = Some((ip, port));
                    }
                }
                Egress::Frame(frame) => {
                    let Some(d) = Datagram::from_frame(&frame) else {
                        continue;
                    };
                    if let Some((ip, base)) = operator {
                        send_to(&out_socks, &d, ip, base);
                    }
                    if gateway_enabled {
                        let _ = gw_frames.send(ToGateway::Frame(frame));
                    }
                }
                Egress::Shutdown => break,
            }
        }
    })?;

    // the server loop
    let tick = opts.config.teleop.tick_period();
    let downlink_srv = downlink.clone();
    let egress_bye = egress_tx.clone();
    let server_loop = thread::Builder::new().name("server".into()).spawn(move || {
        let mut next_tick = origin.elapsed();
        loop {
            let wait = next_tick.saturating_sub(origin.elapsed());
            match server_rx.recv_timeout(wait) {
                Ok(ToServer::Frame(frame)) => {
                    if let Some(d) = Datagram::from_frame(&frame) {
                        server.receive(&d, origin.elapsed());
                    }
                }
                Ok(ToServer::Shutdown) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
                Err(mpsc::RecvTimeoutError::Timeout) => {}
            }
            let now = origin.elapsed();
            if now >= next_tick {
                for d in server.tick(now) {
                    downlink_srv.submit(d.to_frame());
                }
                next_tick += tick;
                if next_tick < now {
                    next_tick = now + tick;
                }
            }
        }
        for (stream, session) in [
            (Stream::Command, server.command_session()),
            (Stream::Telemetry, server.telemetry_session()),
            (Stream::Media, server.media_session()),
        ] {
            if let Ok(bytes) = wire::encode_rtcp_compound(&session.bye()) {
                let d = Datagram {
                    stream,
                    rtcp: true,
                    bytes,
                };
                let _ = egress_bye.send(Egress::Frame(d.to_frame()));
            }
        }
        let stats = server.stats();
        log::info!(
            "server stopped: {} commands applied, {} watchdog trips, {} malformed",
            stats.commands_applied,
            stats.watchdog_trips,
            stats.malformed
        );
    })?;

    // console client loop
    let (lines_tx, _) = broadcast::channel::<String>(256);
    let gateway_thread = if opts.gateway.is_some() {
        let mut client = TeleopClient::new(&opts.config, SessionIds::from_seed(opts.seed ^ 0x5eed), wall);
        let ts0 = TeleopServer::new(Arc::clone(&opts.map), opts.config, ids, wall)
            .telemetry_session()
            .sender()
            .initial_timestamp();
        client.set_shared_clock(ts0, Duration::ZERO);
        let lines = lines_tx.clone();
        let uplink = uplink.clone();
        Some(thread::Builder::new().name("console-client".into()).spawn(move || {
            gateway_loop(client, gw_rx, uplink, lines, origin);
        })?)
    } else {
        None
    };

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        if let Some(addr) = opts.gateway {
            let listener = gateway::bind(addr)
                .await
                .with_context(|| format!("binding gateway {addr}"))?;
            log::info!("console gateway on http://{}", listener.local_addr()?);
            let gw = Gateway {
                map_line: map_message(&opts.map).to_line().into(),
                outbound: lines_tx.clone(),
                commands: command_forwarder(gw_tx.clone()),
            };
            tokio::spawn(gateway::serve(listener, gw, opts.assets.clone()));
        }
        match opts.duration {
            Some(d) => {
                tokio::select! {
                    _ = tokio::time::sleep(d) => {}
                    _ = tokio::signal::ctrl_c() => {}
                }
            }
            None => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
        anyhow::Ok(())
    })?;

    log::info!("shutting down");
    stop.store(true, Ordering::Relaxed);
    let _ = to_server.send(ToServer::Shutdown);
    let _ = server_loop.join();
    let _ = gw_tx.send(ToGateway::Shutdown);
    if let Some(t) = gateway_thread {
        let _ = t.join();
    }
    // let the BYEs drain
    thread::sleep(Duration::from_millis(50));
    let _ = egress_tx.send(Egress::Shutdown);
    let _ = egress.join();
    runtime.shutdown_timeout(Duration::from_millis(200));
    Ok(())
}

fn command_forwarder(tx: mpsc::Sender<ToGateway>) -> mpsc::Sender<Command> {
    let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
    thread::spawn(move || {
        while let Ok(cmd) = cmd_rx.recv() {
            if tx.send(ToGateway::Command(cmd)).is_err() {
                break;
            }
        }
    });
    cmd_tx
}

/// The console's RTP endpoint. It talks to the server through the same
/// impaired channel as a remote operator would.
fn gateway_loop(
    mut client: TeleopClient,
    rx: mpsc::Receiver<ToGateway>,
    uplink: LiveChannel,
    lines: broadcast::Sender<String>,
    origin: Instant,
) {
    let period = Duration::from_millis(10);
    let mut next_poll = origin.elapsed();
    let mut next_stats = origin.elapsed() + Duration::from_secs(1);
    loop {
        let wait = next_poll.saturating_sub(origin.elapsed());
        match rx.recv_timeout(wait) {
            Ok(ToGateway::Frame(frame)) => {
                if let Some(d) = Datagram::from_frame(&frame) {
                    client.receive(&d, origin.elapsed());
                }
            }
            Ok(ToGateway::Command(cmd)) => {
                let d = client.send_command(cmd, origin.elapsed());
                uplink.submit(d.to_frame());
            }
            Ok(ToGateway::Shutdown) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => {}
        }
        let now = origin.elapsed();
        if now < next_poll {
            continue;
        }
        next_poll = now + period;
        for ev in client.poll(now) {
            let delay = ev.delay.unwrap_or_default();
            let _ = lines.send(telemetry_message(&ev.telemetry, delay, ev.jitter).to_line());
        }
        for d in client.poll_rtcp(now) {
            uplink.submit(d.to_frame());
        }
        if now >= next_stats {
            next_stats = now + Duration::from_secs(1);
            let _ = lines.send(stats_message(&client, true).to_line());
        }
    }
}

fn stats_message(client: &TeleopClient, shared_clock: bool) -> ConsoleMessage {
    let s = client.stats();
    ConsoleMessage::Stats {
        commands_sent: s.commands_sent,
        telemetry_received: s.telemetry_received,
        telemetry_lost: s.telemetry_lost,
        late_drops: s.late_drops,
        jitter_ms: s.telemetry_jitter.as_secs_f64() * 1000.0,
        rtt_ms: s.rtt.map(|r| r.as_secs_f64() * 1000.0),
        delay_basis: if shared_clock { "one-way" } else { "rtt/2" }.to_string(),
    }
}

pub struct DriveOptions {
    pub config: TeleopConfig,
    pub profile: ImpairmentProfile,
    pub server: IpAddr,
    pub server_base: u16,
    pub bind: IpAddr,
    pub local_base: u16,
    pub waypoints: Vec<(f64, f64)>,
    pub duration: Duration,
    pub seed: u64,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub struct DriveSummary {
    pub arrived: bool,
    pub telemetry: u64,
    pub rtt: Option<Duration>,
    pub jitter: Duration,
}

/// Scripted operator over UDP. Without a shared clock the delay column of
/// the log holds half the RTCP round-trip time.
pub fn drive(opts: DriveOptions) -> Result<DriveSummary> {
    let origin = Instant::now();
    let stop = Arc::new(AtomicBool::new(false));
    let sockets = Sockets::bind(opts.bind, opts.local_base)?;
    let out_socks = sockets.clone_all()?;
    let (server_ip, server_base) = (opts.server, opts.server_base);
    let uplink = LiveChannel::spawn(opts.profile.clone(), move |frame| {
        if let Some(d) = Datagram::from_frame(&frame) {
            send_to(&out_socks, &d, server_ip, server_base);
        }
    });
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let downlink = LiveChannel::spawn(
        ImpairmentProfile {
            seed: opts.profile.seed.wrapping_add(1),
            ..opts.profile.clone()
        },
        move |frame| {
            let _ = tx.send(frame);
        },
    );
    sockets.spawn_readers(Arc::clone(&stop), move |d, _| {
        downlink.submit(d.to_frame());
    })?;

    let mut client = TeleopClient::new(&opts.config, SessionIds::from_seed(opts.seed), NtpTime::now());
    let mut pilot = Pilot::new(opts.waypoints.clone(), PilotConfig::default());
    let mut sink = match &opts.log {
        Some(p) => Some(CsvSink::create(p)?),
        None => None,
    };
    let period = Duration::from_millis(100);
    let mut next_cmd = Duration::ZERO;
    let mut latest = None;
    let mut arrived_at: Option<Duration> = None;
    loop {
        let now = origin.elapsed();
        if now >= opts.duration || arrived_at.is_some_and(|t| now > t + Duration::from_secs(1)) {
            break;
        }
        match rx.recv_timeout(next_cmd.saturating_sub(now)) {
            Ok(frame) => {
                if let Some(d) = Datagram::from_frame(&frame) {
                    client.receive(&d, origin.elapsed());
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
        let now = origin.elapsed();
        if now < next_cmd {
            continue;
        }
        next_cmd = now + period;
        let half_rtt = client.stats().rtt.map(|r| r / 2);
        for ev in client.poll(now) {
            latest = Some(ev.telemetry.pose());
            if let Some(sink) = sink.as_mut() {
                sink.record(&FlowSample {
                    t: ev.arrival.as_secs_f64(),
                    flow: "telemetry-rtt-half".into(),
                    throughput_bps: 0.0,
                    delay_ms: half_rtt.unwrap_or_default().as_secs_f64() * 1000.0,
                    jitter_ms: ev.jitter.as_secs_f64() * 1000.0,
                    drops: 0,
                })?;
            }
        }
        // until the first pose arrives, stop commands announce us to the server
        let cmd = match latest {
            Some(pose) => pilot.steer(&pose),
            None => Command::Stop,
        };
        uplink.submit(client.send_command(cmd, now).to_frame());
        if pilot.arrived() && arrived_at.is_none() {
            log::info!("waypoints reached at {:.1} s", now.as_secs_f64());
            arrived_at = Some(now);
        }
        for d in client.poll_rtcp(now) {
            uplink.submit(d.to_frame());
        }
    }
    // stop the robot explicitly rather than waiting on the watchdog
    uplink.submit(client.send_command(Command::Stop, origin.elapsed()).to_frame());
    thread::sleep(Duration::from_millis(100));
    stop.store(true, Ordering::Relaxed);
    let s = client.stats();
    Ok(DriveSummary {
        arrived: pilot.arrived(),
        telemetry: s.telemetry_received,
        rtt: s.rtt,
        jitter: s.telemetry_jitter,
    })
}
