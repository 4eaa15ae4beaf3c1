//! Simulated differential-drive robot: unicycle kinematics with exact arc
//! integration, disc-vs-wall collision, three ideal sonar rays and a synthetic
//! constant-bitrate media source.
//!
//! Units are millimetres, milliradians and seconds throughout.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

pub const NO_ECHO: u16 = 0xFFFF;
/// Longest step integrated in one piece; longer steps are subdivided.
pub const MAX_STEP: f64 = 0.1;
/// Below this angular rate (mrad/s) motion is integrated as a straight line.
const STRAIGHT_W: f64 = 1.0;
const TWO_PI_MRAD: f64 = 2.0 * PI * 1000.0;
const PI_MRAD: f64 = PI * 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub radius_mm: f64,
    pub vmax: f64,
    pub wmax: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            radius_mm: 200.0,
            vmax: 300.0,
            wmax: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct SonarConfig {
    pub max_range_mm: f64,
}

impl Default for SonarConfig {
    fn default() -> Self {
        Self { max_range_mm: 4000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct MediaConfig {
    pub frame_bytes: usize,
    pub fps: f64,
}

impl Default for MediaConfig {
    fn default() -> Self {
        // 4000 B at 15 fps is 0.48 Mbit/s
        Self {
            frame_bytes: 4000,
            fps: 15.0,
        }
    }
}

/// Maps an angle in mrad into (-1000 pi, 1000 pi].
pub fn normalize_mrad(theta: f64) -> f64 {
    let t = theta.rem_euclid(TWO_PI_MRAD);
    if t > PI_MRAD {
        t - TWO_PI_MRAD
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    /// Heading in mrad.
    pub theta: f64,
    /// Commanded linear velocity, mm/s.
    pub v: f64,
    /// Commanded angular velocity, mrad/s.
    pub w: f64,
}

impl RobotPose {
    pub fn at(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta,
            ..Self::default()
        }
    }

    pub fn is_moving(&self) -> bool {
        self.v != 0.0 || self.w != 0.0
    }

    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

/// Unicycle motion over `dt` seconds, ignoring walls.
pub fn integrate(pose: &RobotPose, dt: f64) -> RobotPose {
    let theta = pose.theta / 1000.0;
    let w = pose.w / 1000.0;
    let (x, y) = if pose.w.abs() < STRAIGHT_W {
        (pose.x + pose.v * theta.cos() * dt, pose.y + pose.v * theta.sin() * dt)
    } else {
        let r = pose.v / w;
        let end = theta + w * dt;
        (
            pose.x + r * (end.sin() - theta.sin()),
            pose.y - r * (end.cos() - theta.cos()),
        )
    };
    RobotPose {
        x,
        y,
        theta: normalize_mrad(pose.theta + pose.w * dt),
        ..*pose
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (self.x2 - self.x1, self.y2 - self.y1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - self.x1) * dx + (py - self.y1) * dy) / len2).clamp(0.0, 1.0)
        };
        (px - (self.x1 + t * dx)).hypot(py - (self.y1 + t * dy))
    }

    /// Distance along the unit ray (ox, oy) + t (dx, dy) to this segment.
    pub fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let (ex, ey) = (self.x2 - self.x1, self.y2 - self.y1);
        let denom = dx * ey - dy * ex;
        if denom == 0.0 {
            return None;
        }
        let (ax, ay) = (self.x1 - ox, self.y1 - oy);
        let t = (ax * ey - ay * ex) / denom;
        let u = (ax * dy - ay * dx) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("reading map: {0}")]
    Io(#[from] std::io::Error),
    #[error("map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("map needs both a start and a goal")]
    MissingEndpoint,
    #[error("start and goal coincide")]
    StartIsGoal,
}

/// Wall segments plus the start pose (O_o) and goal point (O_d).
#[derive(Debug, Clone, PartialEq)]
pub struct WallMap {
    pub walls: Vec<Segment>,
    pub start: RobotPose,
    pub goal: (f64, f64),
}

impl WallMap {
    /// Parses the text map format: `x1 y1 x2 y2` per wall, `start x y theta`,
    /// `goal x y`, `#` comments.
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut walls = Vec::new();
        let mut start = None;
        let mut goal = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| MapError::Parse { line: idx + 1, msg };
            let mut words = line.split_whitespace().peekable();
            let keyword = match words.peek() {
                Some(&w @ ("start" | "goal")) => {
                    words.next();
                    Some(w)
                }
                _ => None,
            };
            let nums: Vec<f64> = words
                .map(|w| w.parse::<f64>().map_err(|e| err(format!("`{w}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite coordinate".into()));
            }
            match (keyword, nums.as_slice()) {
                (Some("start"), [x, y, theta]) => start = Some(RobotPose::at(*x, *y, normalize_mrad(*theta))),
                (Some("start"), [x, y]) => start = Some(RobotPose::at(*x, *y, 0.0)),
                (Some("goal"), [x, y]) => goal = Some((*x, *y)),
                (None, [x1, y1, x2, y2]) => walls.push(Segment::new(*x1, *y1, *x2, *y2)),
                _ => return Err(err(format!("unrecognized line `{line}`"))),
            }
        }
        let (start, goal) = match (start, goal) {
            (Some(s), Some(g)) => (s, g),
            _ => return Err(MapError::MissingEndpoint),
        };
        if start.x == goal.0 && start.y == goal.1 {
            return Err(MapError::StartIsGoal);
        }
        Ok(Self { walls, start, goal })
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The invented lab floor plan used for the navigation replication.
    pub fn replication() -> Self {
        Self::parse(REPLICATION_MAP).expect("shipped map parses")
    }

    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        self.walls
            .iter()
            .map(|w| w.distance_to(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest wall along a ray from (x, y) at `heading` radians.
    pub fn cast(&self, x: f64, y: f64, heading: f64) -> Option<f64> {
        let (dx, dy) = (heading.cos(), heading.sin());
        self.walls
            .iter()
            .filter_map(|w| w.ray_hit(x, y, dx, dy))
            .min_by(f64::total_cmp)
    }

    /// Mirror image across the x axis.
    pub fn mirrored(&self) -> Self {
        Self {
            walls: self
                .walls
                .iter()
                .map(|w| Segment::new(w.x1, -w.y1, w.x2, -w.y2))
                .collect(),
            start: RobotPose::at(self.start.x, -self.start.y, normalize_mrad(-self.start.theta)),
            goal: (self.goal.0, -self.goal.1),
        }
    }
}

pub const REPLICATION_MAP: &str = include_str!("../../../scenarios/lab.map");
pub const REPLICATION_WAYPOINTS: &str = include_str!("../../../scenarios/lab.waypoints");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SonarScan {
    pub front: u16,
    pub left: u16,
    pub right: u16,
}

impl SonarScan {
    pub fn as_array(&self) -> [u16; 3] {
        [self.front, self.left, self.right]
    }
}

fn encode_range(range: Option<f64>, max_range: f64) -> u16 {
    match range {
        Some(d) if d <= max_range => d.round().min(max_range) as u16,
        _ => NO_ECHO,
    }
}

/// Three ideal rays from the robot centre: ahead, left (+90°) and right (-90°).
pub fn sonar_scan(pose: &RobotPose, map: &WallMap, config: &SonarConfig) -> SonarScan {
    let heading = pose.theta / 1000.0;
    let range = |offset: f64| encode_range(map.cast(pose.x, pose.y, heading + offset), config.max_range_mm);
    SonarScan {
        front: range(0.0),
        left: range(FRAC_PI_2),
        right: range(-FRAC_PI_2),
    }
}

/// Synthetic frame for media tick `tick`. Content is a pure function of the
/// tick so a receiver can verify what it got.
pub fn media_frame(tick: u64, frame_bytes: usize) -> Vec<u8> {
    let mut frame = Vec::with_capacity(frame_bytes);
    frame.extend_from_slice(&tick.to_be_bytes());
    let mut state = tick ^ 0x9E37_79B9_7F4A_7C15;
    while frame.len() < frame_bytes {
        // splitmix64
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        frame.extend_from_slice(&z.to_le_bytes());
    }
    frame.truncate(frame_bytes);
    frame
}

/// Tick number embedded in a media frame, if the frame checks out.
pub fn verify_media_frame(frame: &[u8]) -> Option<u64> {
    let tick = u64::from_be_bytes(frame.get(..8)?.try_into().ok()?);
    (media_frame(tick, frame.len()) == frame).then_some(tick)
}

/// A robot in a map. Owned by one event loop; copies of the pose are cheap.
#[derive(Debug, Clone)]
pub struct Robot {
    pose: RobotPose,
    config: RobotConfig,
    sonar: SonarConfig,
    map: std::sync::Arc<WallMap>,
}

impl Robot {
    pub fn new(map: std::sync::Arc<WallMap>, config: RobotConfig, sonar: SonarConfig) -> Self {
        Self {
            pose: map.start,
            config,
            sonar,
            map,
        }
    }

    pub fn pose(&self) -> RobotPose {
        self.pose
    }

    pub fn map(&self) -> &WallMap {
        &self.map
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    /// Sets commanded velocities, clamped to the configured limits.
    pub fn command(&mut self, v: f64, w: f64) {
        self.pose.v = v.clamp(-self.config.vmax, self.config.vmax);
        self.pose.w = w.clamp(-self.config.wmax, self.config.wmax);
    }

    pub fn halt(&mut self) {
        self.pose.v = 0.0;
        self.pose.w = 0.0;
    }

    fn is_clear(&self, pose: &RobotPose) -> bool {
        self.map.clearance(pose.x, pose.y) >= self.config.radius_mm
    }

    /// Advances by `dt` seconds. Contact with a wall stops the robot at the
    /// contact point and zeroes its linear velocity.
    pub fn step(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let pieces = (dt / MAX_STEP).ceil().max(1.0) as usize;
        let piece = dt / pieces as f64;
        for _ in 0..pieces {
            self.step_piece(piece);
        }
    }

    fn step_piece(&mut self, dt: f64) {
        let next = integrate(&self.pose, dt);
        if self.pose.v == 0.0 || self.is_clear(&next) {
            self.pose = next;
            return;
        }
        // bisect for the last clear fraction of the step
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.is_clear(&integrate(&self.pose, mid * dt)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut stopped = if lo > 0.0 {
            integrate(&self.pose, lo * dt)
        } else {
            self.pose
        };
        stopped.v = 0.0;
        self.pose = stopped;
    }

    pub fn sonar(&self) -> SonarScan {
        sonar_scan(&self.pose, &self.map, &self.sonar)
    }
}
