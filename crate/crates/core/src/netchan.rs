//! Seedable one-way network impairment channel.
//!
//! Models loss, duplication, a rate-limited droptail FIFO, a fixed base delay
//! and per-packet jitter. Time is injected, so the same channel runs against a
//! virtual clock in simulation and against a monotonic clock in live mode.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("reading profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing profile: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid profile: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterModel {
    None,
    /// Uniform on [-a, +a].
    Uniform(Duration),
    /// Gaussian with the given sigma, truncated at 4 sigma.
    Gaussian(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpairmentProfile {
    pub base_delay: Duration,
    pub jitter: JitterModel,
    pub loss_prob: f64,
    pub dup_prob: f64,
    /// Bits per second; 0 means unlimited.
    pub rate_bps: f64,
    pub queue_capacity: usize,
    pub seed: u64,
}

impl Default for ImpairmentProfile {
    fn default() -> Self {
        Self {
            base_delay: Duration::ZERO,
            jitter: JitterModel::None,
            loss_prob: 0.0,
            dup_prob: 0.0,
            rate_bps: 0.0,
            queue_capacity: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    base_delay_ms: f64,
    #[serde(default = "none_str")]
    jitter: String,
    #[serde(default)]
    jitter_ms: f64,
    #[serde(default)]
    loss_prob: f64,
    #[serde(default)]
    dup_prob: f64,
    #[serde(default)]
    rate_bps: f64,
    #[serde(default = "default_queue")]
    queue_capacity: usize,
    #[serde(default)]
    seed: u64,
}

fn none_str() -> String {
    "none".into()
}

fn default_queue() -> usize {
    1000
}

impl ImpairmentProfile {
    /// 43 ms mean one-way delay with 4 ms Gaussian jitter, no loss.
    pub fn replication(seed: u64) -> Self {
        Self {
            base_delay: Duration::from_millis(43),
            jitter: JitterModel::Gaussian(Duration::from_millis(4)),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (name, p) in [("loss_prob", self.loss_prob), ("dup_prob", self.dup_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProfileError::Invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.rate_bps >= 0.0 && self.rate_bps.is_finite()) {
            return Err(ProfileError::Invalid(format!("rate_bps = {}", self.rate_bps)));
        }
        if self.rate_bps > 0.0 && self.queue_capacity == 0 {
            return Err(ProfileError::Invalid("queue_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` profile format.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let file: ProfileFile = toml::from_str(text)?;
        let ms = |v: f64, key: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(Duration::from_secs_f64(v / 1000.0))
            } else {
                Err(ProfileError::Invalid(format!("{key} = {v}")))
            }
        };
        let spread = ms(file.jitter_ms, "jitter_ms")?;
        let jitter = match file.jitter.as_str() {
            "none" => JitterModel::None,
            "uniform" => JitterModel::Uniform(spread),
            "gaussian" => JitterModel::Gaussian(spread),
            other => return Err(ProfileError::Invalid(format!("unknown jitter model `{other}`"))),
        };
        let profile = Self {
            base_delay: ms(file.base_delay_ms, "base_delay_ms")?,
            jitter,
            loss_prob: file.loss_prob,
            dup_prob: file.dup_prob,
            rate_bps: file.rate_bps,
            queue_capacity: file.queue_capacity,
            seed: file.seed,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelStats {
    pub submitted: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_queue: u64,
    pub duplicated: u64,
    pub in_flight: u64,
}

#[derive(Debug)]
struct InFlight {
    deliver_at: Duration,
    order: u64,
    payload: Vec<u8>,
}

impl PartialEq for InFlight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for InFlight {}

impl PartialOrd for InFlight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InFlight {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.deliver_at, other.order).cmp(&(self.deliver_at, self.order))
    }
}

#[derive(Debug)]
pub struct NetChannel {
    profile: ImpairmentProfile,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    link_free_at: Duration,
    /// Departure times of packets still occupying the queue.
    queue: VecDeque<Duration>,
    in_flight: BinaryHeap<InFlight>,
    next_order: u64,
    stats: ChannelStats,
}

impl NetChannel {
    pub fn new(profile: ImpairmentProfile) -> Self {
        let normal = match profile.jitter {
            JitterModel::Gaussian(sigma) if !sigma.is_zero() => Normal::new(0.0, sigma.as_secs_f64()).ok(),
            _ => None,
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            normal,
            link_free_at: Duration::ZERO,
            queue: VecDeque::new(),
            in_flight: BinaryHeap::new(),
            next_order: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn profile(&self) -> &ImpairmentProfile {
        &self.profile
    }

    pub fn submit(&mut self, payload: Vec<u8>, now: Duration) {
        self.stats.submitted += 1;
        if self.rng.random_bool(self.profile.loss_prob) {
            self.stats.dropped_loss += 1;
            return;
        }
        let duplicate = self.rng.random_bool(self.profile.dup_prob);
        if duplicate {
            self.stats.duplicated += 1;
            self.admit(payload.clone(), now);
        }
        self.admit(payload, now);
    }

    fn admit(&mut self, payload: Vec<u8>, now: Duration) {
        let depart = if self.profile.rate_bps > 0.0 {
            while self.queue.front().is_some_and(|&t| t <= now) {
                self.queue.pop_front();
            }
            if self.queue.len() >= self.profile.queue_capacity {
                self.stats.dropped_queue += 1;
                return;
            }
            let serialization = Duration::from_secs_f64(payload.len() as f64 * 8.0 / self.profile.rate_bps);
            let depart = self.link_free_at.max(now) + serialization;
            self.link_free_at = depart;
            self.queue.push_back(depart);
            depart
        } else {
            now
        };

        // jitter is applied after the queue and never makes delivery precede departure
        let delay = self.profile.base_delay.as_secs_f64() + self.sample_jitter();
        let deliver_at = depart + Duration::from_secs_f64(delay.max(0.0));
        self.in_flight.push(InFlight {
            deliver_at,
            order: self.next_order,
            payload,
        });
        self.next_order += 1;
    }

    fn sample_jitter(&mut self) -> f64 {
        match self.profile.jitter {
            JitterModel::None => 0.0,
            JitterModel::Uniform(a) => {
                let a = a.as_secs_f64();
                if a == 0.0 {
                    0.0
                } else {
                    self.rng.random_range(-a..=a)
                }
            }
            JitterModel::Gaussian(sigma) => {
                let Some(normal) = self.normal else { return 0.0 };
                let bound = 4.0 * sigma.as_secs_f64();
                loop {
                    let x = normal.sample(&mut self.rng);
                    if x.abs() <= bound {
                        return x;
                    }
                }
            }
        }
    }

    /// Everything due by `now`, in delivery-time order (ties by submission).
    pub fn poll_deliveries(&mut self, now: Duration) -> Vec<(Vec<u8>, Duration)> {
        let mut out = Vec::new();
        while self.in_flight.peek().is_some_and(|p| p.deliver_at <= now) {
            let p = self.in_flight.pop().expect("peeked");
            self.stats.delivered += 1;
            out.push((p.payload, p.deliver_at));
        }
        out
    }

    pub fn next_delivery(&self) -> Option<Duration> {
        self.in_flight.peek().map(|p| p.deliver_at)
    }

    pub fn stats(&self) -> ChannelStats {
        ChannelStats {
            in_flight: self.in_flight.len() as u64,
            ..self.stats
        }
    }
}

/// A channel driven by the monotonic clock on its own thread. Any number of
/// producers may submit through cloned [`LiveChannel`] handles.
#[derive(Clone)]
pub struct LiveChannel {
    tx: mpsc::Sender<Vec<u8>>,
}

impl LiveChannel {
    pub fn spawn<F>(profile: ImpairmentProfile, mut deliver: F) -> Self
    where
        F: FnMut(Vec<u8>) + Send + 'static,
    {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        thread::Builder::new()
            .name("netchan".into())
            .spawn(move || {
                let origin = Instant::now();
                let mut chan = NetChannel::new(profile);
                let mut open = true;
                while open || chan.next_delivery().is_some() {
                    let now = origin.elapsed();
                    let wait = chan
                        .next_delivery()
                        .map(|t| t.saturating_sub(now))
                        .unwrap_or(Duration::from_millis(100));
                    if open {
                        match rx.recv_timeout(wait) {
                            Ok(payload) => chan.submit(payload, origin.elapsed()),
                            Err(mpsc::RecvTimeoutError::Timeout) => {}
                            Err(mpsc::RecvTimeoutError::Disconnected) => open = false,
                        }
                    } else {
                        thread::sleep(wait);
                    }
                    for (payload, _) in chan.poll_deliveries(origin.elapsed()) {
                        deliver(payload);
                    }
                }
            })
            .expect("spawn netchan thread");
        Self { tx }
    }

    /// Returns false once the channel thread has gone away.
    pub fn submit(&self, payload: Vec<u8>) -> bool {
        self.tx.send(payload).is_ok()
    }
}
