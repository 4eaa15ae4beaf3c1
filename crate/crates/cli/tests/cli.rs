use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn teleop() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_teleop"));
    c.env_remove("TELEOP_SEED").env("RUST_LOG", "warn");
    c
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn race_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.csv");
    let st = teleop()
        .args(["race", "--scenario", "A", "--seed", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("t,flow,throughput_bps,delay_ms,jitter_ms,drops\n"));
    assert!(text.lines().count() > 1000);
}

#[test]
fn race_accepts_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let st = teleop()
        .args(["race", "--duration", "5", "--scenario"])
        .arg(workspace().join("scenarios/race_b.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.exists());
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = teleop().args(["race", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(teleop().arg("fly").status().unwrap().code(), Some(1));
    assert_eq!(teleop().output().unwrap().status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(teleop().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn bad_seed_env_is_usage_error() {
    let st = teleop()
        .env("TELEOP_SEED", "many")
        .args(["race", "--scenario", "A", "--out", "/nonexistent/x.csv"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn missing_scenario_file_is_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let st = teleop()
        .args(["race", "--scenario", "no/such/file.toml", "--out"])
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn seed_env_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed_flag: &str, env: Option<&str>| {
        let out = dir.path().join(name);
        let mut c = teleop();
        if let Some(e) = env {
            c.env("TELEOP_SEED", e);
        }
        let st = c
            .args([
                "race",
                "--scenario",
                "A",
                "--duration",
                "3",
                "--seed",
                seed_flag,
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out).unwrap()
    };
    let seven = run("a", "7", None);
    let overridden = run("b", "1", Some("7"));
    let one = run("c", "1", None);
    assert_eq!(seven, overridden);
    assert_ne!(seven, one);
}

#[test]
fn report_renders_figures() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    assert!(teleop()
        .args(["race", "--scenario", "B", "--duration", "5", "--out"])
        .arg(&csv)
        .status()
        .unwrap()
        .success());
    let figs = dir.path().join("figs");
    let st = teleop()
        .arg("report")
        .arg("--in")
        .arg(&csv)
        .arg("--out")
        .arg(&figs)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    for f in ["delay.svg", "jitter.svg", "throughput.svg"] {
        let svg = std::fs::read_to_string(figs.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
}

fn replicate_into(dir: &Path) -> String {
    let out = teleop()
        .args(["replicate", "--seed", "1", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn replicate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let stdout = replicate_into(a.path());
    replicate_into(b.path());
    for key in ["goal_distance_mm", "mean_delay_ms", "mean_jitter_ms"] {
        assert!(stdout.contains(key), "verdict lacks {key}");
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv") || n.to_string_lossy().ends_with(".txt"))
        .collect();
    names.sort();
    assert!(names.len() >= 5, "{names:?}");
    for n in names {
        let x = std::fs::read(a.path().join(&n)).unwrap();
        let y = std::fs::read(b.path().join(&n)).unwrap();
        assert!(x == y, "{n:?} differs between runs");
    }
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_tcp_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn free_udp_base() -> u16 {
    // six consecutive free ports
    loop {
        let probe = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
        let base = probe.local_addr().unwrap().port() & !1;
        drop(probe);
        if !(1024..=65_000).contains(&base) {
            continue;
        }
        if (0..6).all(|k| std::net::UdpSocket::bind(("127.0.0.1", base + k)).is_ok()) {
            return base;
        }
    }
}

fn read_json(ws: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<TcpStream>>) -> Value {
    loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

#[test]
fn gateway_relays_commands_and_telemetry() {
    let http = free_tcp_port();
    let udp = free_udp_base();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<p>console</p>").unwrap();
    let _server = Server(
        teleop()
            .current_dir(workspace())
            .args(["serve", "--duration", "30", "--bind", "127.0.0.1"])
            .args(["--port-base", &udp.to_string()])
            .args(["--gateway", &format!("127.0.0.1:{http}")])
            .arg("--assets")
            .arg(assets.path())
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(10);
    let (mut ws, _) = loop {
        match tungstenite::connect(format!("ws://127.0.0.1:{http}/ws")) {
            Ok(c) => break c,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("gateway never came up: {e}"),
        }
    };
    let first = read_json(&mut ws);
    assert_eq!(first["type"], "map");

    // static assets
    let mut s = TcpStream::connect(("127.0.0.1", http)).unwrap();
    use std::io::{Read, Write};
    write!(s, "GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    assert!(body.contains("<p>console</p>"), "{body}");

    // garbage is ignored, the socket stays open
    ws.send(tungstenite::Message::Text("{\"type\":\"warp\"}".into()))
        .unwrap();

    let start = Instant::now();
    let mut r0 = None;
    let mut moved = false;
    let mut stats = false;
    while start.elapsed() < Duration::from_secs(8) && !(moved && stats) {
        ws.send(tungstenite::Message::Text(
            "{\"type\":\"cmd\",\"v\":200,\"w\":0}".into(),
        ))
        .unwrap();
        for _ in 0..5 {
            let m = read_json(&mut ws);
            match m["type"].as_str().unwrap() {
                "telemetry" => {
                    let r = m["x"].as_f64().unwrap().hypot(m["y"].as_f64().unwrap());
                    assert!(m["delay_ms"].as_f64().unwrap() >= 0.0);
                    match r0 {
                        None => r0 = Some(r),
                        Some(r0) => moved |= (r - r0).abs() > 20.0,
                    }
                }
                "stats" => {
                    stats = true;
                    assert!(m["commands_sent"].as_f64().unwrap() > 0.0);
                }
                other => panic!("unexpected message {other}"),
            }
        }
    }
    assert!(moved, "robot never moved under console commands");
    assert!(stats, "no stats message");
    ws.send(tungstenite::Message::Text("{\"type\":\"estop\"}".into()))
        .unwrap();
}
