use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use teleop_core::metrics;
use teleop_core::netchan::ImpairmentProfile;
use teleop_core::pilot;
use teleop_core::race::{self, Scenario};
use teleop_core::replicate;
use teleop_core::robot::WallMap;
use teleop_core::teleop::TeleopConfig;

mod gateway;
mod live;

#[derive(Parser, Debug)]
#[command(
    name = "teleop",
    version,
    about = "RTP teleoperation server, scripted operator and protocol race"
)]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand, Debug)]
enum Mode {
    /// Run the robot server, optionally with the console gateway.
    Serve(ServeArgs),
    /// Drive a running server along a waypoint file.
    Drive(DriveArgs),
    /// Run a protocol-comparison scenario and write per-window samples.
    Race(RaceArgs),
    /// Render delay, jitter and throughput figures from a samples CSV.
    Report(ReportArgs),
    /// Run the teleoperation replication and both race scenarios.
    Replicate(ReplicateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Teleoperation config (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network impairment profile applied to both directions.
    #[arg(long)]
    netsim: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "scenarios/lab.map")]
    map: PathBuf,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::UNSPECIFIED))]
    bind: IpAddr,
    /// First of six consecutive UDP ports (command, telemetry, media; RTP then RTCP).
    #[arg(long, default_value_t = 5004)]
    port_base: u16,
    /// Console gateway address, e.g. 127.0.0.1:8080.
    #[arg(long)]
    gateway: Option<SocketAddr>,
    /// Directory of console static files.
    #[arg(long)]
    assets: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DriveArgs {
    #[command(flatten)]
    common: Common,
    /// Server address as HOST:BASE_PORT.
    #[arg(long, default_value = "127.0.0.1:5004")]
    connect: SocketAddr,
    #[arg(long, default_value = "scenarios/lab.waypoints")]
    waypoints: PathBuf,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::UNSPECIFIED))]
    bind: IpAddr,
    #[arg(long, default_value_t = 6004)]
    local_port: u16,
    /// Write telemetry samples to this CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RaceArgs {
    /// A, B or a scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "replication-out")]
    out: PathBuf,
}

const USAGE: u8 = 1;
const FAILURE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed_override = match std::env::var("TELEOP_SEED") {
        Ok(s) => match s.trim().parse::<u64>() {
            Ok(v) => Some(v),
            Err(_) => {
                eprintln!("error: TELEOP_SEED must be an unsigned integer, got {s:?}");
                return ExitCode::from(USAGE);
            }
        },
        Err(_) => None,
    };
    match run(cli.mode, seed_override) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}

fn run(mode: Mode, seed_override: Option<u64>) -> Result<()> {
    match mode {
        Mode::Serve(a) => serve(a, seed_override),
        Mode::Drive(a) => drive(a, seed_override),
        Mode::Race(a) => race_cmd(a, seed_override),
        Mode::Report(a) => report(a),
        Mode::Replicate(a) => replicate_cmd(a, seed_override),
    }
}

fn load_config(path: Option<&Path>) -> Result<TeleopConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TeleopConfig::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(TeleopConfig::default()),
    }
}

/// Impairment for live runs; none unless a profile file is given. The run
/// seed replaces any seed in the file.
fn load_profile(path: Option<&Path>, seed: u64) -> Result<ImpairmentProfile> {
    let profile = match path {
        Some(p) => ImpairmentProfile::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ImpairmentProfile::default(),
    };
    Ok(ImpairmentProfile { seed, ..profile })
}

fn duration(secs: Option<f64>) -> Result<Option<Duration>> {
    secs.map(|s| Duration::try_from_secs_f64(s).context("--duration must be a non-negative number of seconds"))
        .transpose()
}

fn serve(a: ServeArgs, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or(a.common.seed);
    let map = WallMap::load(&a.map).with_context(|| format!("loading map {}", a.map.display()))?;
    live::serve(live::ServeOptions {
        config: load_config(a.common.config.as_deref())?,
        map: Arc::new(map),
        profile: load_profile(a.common.netsim.as_deref(), seed)?,
        bind: a.bind,
        base_port: a.port_base,
        gateway: a.gateway,
        assets: a.assets,
        duration: duration(a.common.duration)?,
        seed,
    })
}

fn drive(a: DriveArgs, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or(a.common.seed);
    let waypoints =
        pilot::load_waypoints(&a.waypoints).with_context(|| format!("loading {}", a.waypoints.display()))?;
    let summary = live::drive(live::DriveOptions {
        config: load_config(a.common.config.as_deref())?,
        profile: load_profile(a.common.netsim.as_deref(), seed)?,
        server: a.connect.ip(),
        server_base: a.connect.port(),
        bind: a.bind,
        local_base: a.local_port,
        waypoints,
        duration: duration(a.common.duration)?.unwrap_or(Duration::from_secs(600)),
        seed,
        log: a.log,
    })?;
    println!(
        "arrived = {}\ntelemetry = {}\nrtt_ms = {}\njitter_ms = {:.3}",
        summary.arrived,
        summary.telemetry,
        summary
            .rtt
            .map(|r| format!("{:.3}", r.as_secs_f64() * 1000.0))
            .unwrap_or_else(|| "n/a".into()),
        summary.jitter.as_secs_f64() * 1000.0
    );
    if !summary.arrived {
        anyhow::bail!("waypoints not reached");
    }
    Ok(())
}

fn race_cmd(a: RaceArgs, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or(a.seed);
    let mut scenario = match a.scenario.as_str() {
        "A" | "a" => Scenario::preset_a(seed),
        "B" | "b" => Scenario::preset_b(seed),
        path => Scenario::load(Path::new(path)).with_context(|| format!("loading scenario {path}"))?,
    };
    scenario.seed = seed;
    if let Some(d) = a.duration {
        scenario.duration = d;
    }
    let outcome = race::run_scenario(&scenario)?;
    metrics::write_csv(&a.out, &outcome.samples).with_context(|| format!("writing {}", a.out.display()))?;
    for (flow, s) in race::steady_state(&outcome.samples, scenario.warmup.min(scenario.duration / 2.0)) {
        println!(
            "{flow}: throughput {:.0} bps, delay {:.2} ms, jitter {:.2} ms",
            s.mean_throughput_bps, s.mean_delay_ms, s.mean_jitter_ms
        );
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let samples = metrics::read_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    for path in metrics::render(&samples, &a.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn replicate_cmd(a: ReplicateArgs, seed_override: Option<u64>) -> Result<()> {
    let seed = seed_override.unwrap_or(a.seed);
    let artifacts = replicate::replicate(seed, &a.out)?;
    print!("{}", artifacts.verdict.render());
    Ok(())
}
