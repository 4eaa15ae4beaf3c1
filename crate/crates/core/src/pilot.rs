//! Scripted operator: pure-pursuit steering along a waypoint path.

use std::path::Path;

use crate::robot::{normalize_mrad, RobotPose};
use crate::teleop::Command;

#[derive(Debug, thiserror::Error)]
pub enum WaypointError {
    #[error("reading waypoints: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `x y`")]
    Syntax { line: usize },
    #[error("need at least one waypoint")]
    Empty,
}

/// `x y` per line in mm; `#` starts a comment.
pub fn parse_waypoints(text: &str) -> Result<Vec<(f64, f64)>, WaypointError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| WaypointError::Syntax { line: i + 1 })?;
        match nums[..] {
            [x, y] if x.is_finite() && y.is_finite() => out.push((x, y)),
            _ => return Err(WaypointError::Syntax { line: i + 1 }),
        }
    }
    if out.is_empty() {
        return Err(WaypointError::Empty);
    }
    Ok(out)
}

pub fn load_waypoints(path: &Path) -> Result<Vec<(f64, f64)>, WaypointError> {
    parse_waypoints(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotConfig {
    pub lookahead_mm: f64,
    pub cruise_mm_s: f64,
    pub max_turn_mrad_s: f64,
    pub arrive_mm: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            lookahead_mm: 300.0,
            cruise_mm_s: 100.0,
            max_turn_mrad_s: 1000.0,
            arrive_mm: 80.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pilot {
    path: Vec<(f64, f64)>,
    config: PilotConfig,
    /// Index of the segment currently being tracked (path[i] -> path[i+1]).
    segment: usize,
    arrived: bool,
}

impl Pilot {
    pub fn new(path: Vec<(f64, f64)>, config: PilotConfig) -> Self {
        assert!(!path.is_empty());
        Self {
            path,
            config,
            segment: 0,
            arrived: false,
        }
    }

    pub fn arrived(&self) -> bool {
        self.arrived
    }

    pub fn goal(&self) -> (f64, f64) {
        *self.path.last().unwrap()
    }

    /// Next command given the last reported pose.
    pub fn steer(&mut self, pose: &RobotPose) -> Command {
        let goal = self.goal();
        if self.arrived || pose.distance_to(goal.0, goal.1) < self.config.arrive_mm {
            self.arrived = true;
            return Command::Stop;
        }
        self.advance_segment(pose);
        let (tx, ty) = self.lookahead_point(pose);
        let dx = tx - pose.x;
        let dy = ty - pose.y;
        let bearing = normalize_mrad((dy.atan2(dx) * 1000.0) - pose.theta);
        let wmax = self.config.max_turn_mrad_s;
        // turn on the spot when the target is well off the nose
        if bearing.abs() > 1200.0 {
            return Command::Velocity {
                v: 0,
                w: (wmax / 2.0).copysign(bearing) as i16,
            };
        }
        let (s, c) = (pose.theta / 1000.0).sin_cos();
        let ly = -s * dx + c * dy;
        let d2 = dx * dx + dy * dy;
        let v = self.config.cruise_mm_s.min(pose.distance_to(goal.0, goal.1).max(40.0));
        let w = (v * 2.0 * ly / d2 * 1000.0).clamp(-wmax, wmax);
        Command::Velocity {
            v: v.round() as i16,
            w: w.round() as i16,
        }
    }

    fn advance_segment(&mut self, pose: &RobotPose) {
        while self.segment + 1 < self.path.len() {
            let a = self.path[self.segment];
            let b = self.path[self.segment + 1];
            let (t, _) = project(a, b, (pose.x, pose.y));
            let near_end = pose.distance_to(b.0, b.1) < self.config.lookahead_mm;
            if t >= 1.0 || (near_end && self.segment + 2 < self.path.len()) {
                self.segment += 1;
            } else {
                break;
            }
        }
    }

    fn lookahead_point(&self, pose: &RobotPose) -> (f64, f64) {
        if self.segment + 1 >= self.path.len() {
            return self.goal();
        }
        let a = self.path[self.segment];
        let b = self.path[self.segment + 1];
        let (t, len) = project(a, b, (pose.x, pose.y));
        let mut remaining = self.config.lookahead_mm;
        let mut along = t.clamp(0.0, 1.0) * len;
        let mut i = self.segment;
        loop {
            let (p, q) = (self.path[i], self.path[i + 1]);
            let seg_len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
            if along + remaining <= seg_len || i + 2 >= self.path.len() {
                let f = if seg_len > 0.0 {
                    ((along + remaining) / seg_len).min(1.0)
                } else {
                    1.0
                };
                return (p.0 + (q.0 - p.0) * f, p.1 + (q.1 - p.1) * f);
            }
            remaining -= seg_len - along;
            along = 0.0;
            i += 1;
        }
    }
}

/// Parameter of the projection of `p` on segment ab, and the segment length.
fn project(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (1.0, 0.0);
    }
    (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2, len2.sqrt())
}
