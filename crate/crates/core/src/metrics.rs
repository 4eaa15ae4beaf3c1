//! Flow samples, CSV logs, summaries and SVG figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-finite value in sample for flow {flow} at t={t}")]
    NonFinite { flow: String, t: f64 },
    #[error("no samples")]
    Empty,
}

/// One row of a metrics log. Per-packet logs use `t` = arrival time and
/// leave `throughput_bps` at zero; windowed logs fill every column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    /// seconds
    pub t: f64,
    pub flow: String,
    pub throughput_bps: f64,
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub drops: u64,
}

impl FlowSample {
    fn check(&self) -> Result<(), MetricsError> {
        if [self.t, self.throughput_bps, self.delay_ms, self.jitter_ms]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(())
        } else {
            Err(MetricsError::NonFinite {
                flow: self.flow.clone(),
                t: self.t,
            })
        }
    }
}

/// Append-only CSV writer, flushed after every record so a crashed run
/// still leaves a readable log.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
    rows: usize,
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> CsvSink<W> {
    pub fn new(inner: W) -> Self {
        Self {
            writer: csv::Writer::from_writer(inner),
            rows: 0,
        }
    }

    pub fn record(&mut self, sample: &FlowSample) -> Result<(), MetricsError> {
        sample.check()?;
        self.writer.serialize(sample)?;
        self.writer.flush()?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn into_inner(self) -> Result<W, MetricsError> {
        self.writer.into_inner().map_err(|e| MetricsError::Io(e.into_error()))
    }
}

pub fn write_csv(path: &Path, samples: &[FlowSample]) -> Result<(), MetricsError> {
    let mut sink = CsvSink::create(path)?;
    for s in samples {
        sink.record(s)?;
    }
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<FlowSample>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows: Result<Vec<FlowSample>, _> = reader.deserialize().collect();
    Ok(rows?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub samples: usize,
    pub mean_delay_ms: f64,
    pub p95_delay_ms: f64,
    pub mean_jitter_ms: f64,
    pub mean_throughput_bps: f64,
    /// drops / (samples + drops)
    pub loss: f64,
}

/// Nearest-rank percentile of an unsorted slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

pub fn summarize(samples: &[FlowSample]) -> Result<Summary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = samples.len() as f64;
    let delays: Vec<f64> = samples.iter().map(|s| s.delay_ms).collect();
    let drops: u64 = samples.iter().map(|s| s.drops).sum();
    Ok(Summary {
        samples: samples.len(),
        mean_delay_ms: delays.iter().sum::<f64>() / n,
        p95_delay_ms: percentile(&delays, 95.0),
        mean_jitter_ms: samples.iter().map(|s| s.jitter_ms).sum::<f64>() / n,
        mean_throughput_bps: samples.iter().map(|s| s.throughput_bps).sum::<f64>() / n,
        loss: drops as f64 / (n + drops as f64),
    })
}

/// Per-flow summaries, keyed by flow name.
pub fn summarize_flows(samples: &[FlowSample]) -> Result<BTreeMap<String, Summary>, MetricsError> {
    let mut by_flow: BTreeMap<String, Vec<FlowSample>> = BTreeMap::new();
    for s in samples {
        by_flow.entry(s.flow.clone()).or_default().push(s.clone());
    }
    by_flow.into_iter().map(|(k, v)| Ok((k, summarize(&v)?))).collect()
}

/// Per-packet record used to build windowed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketObservation {
    pub arrival: f64,
    pub bytes: usize,
    pub delay_ms: f64,
    pub jitter_ms: f64,
    pub lost_before: u64,
}

/// Buckets per-packet observations of one flow into fixed windows ending
/// at `period`, `2*period`, ... up to `end`. Empty windows repeat the last
/// delay and jitter.
pub fn window(flow: &str, packets: &[PacketObservation], period: f64, end: f64) -> Vec<FlowSample> {
    let n = (end / period).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut idx = 0;
    let (mut last_delay, mut last_jitter) = (0.0, 0.0);
    for k in 1..=n {
        let t_end = k as f64 * period;
        let (mut bytes, mut drops, mut delay_sum, mut count) = (0usize, 0u64, 0.0, 0usize);
        while idx < packets.len() && packets[idx].arrival < t_end {
            let p = &packets[idx];
            bytes += p.bytes;
            drops += p.lost_before;
            delay_sum += p.delay_ms;
            count += 1;
            last_jitter = p.jitter_ms;
            idx += 1;
        }
        if count > 0 {
            last_delay = delay_sum / count as f64;
        }
        out.push(FlowSample {
            t: t_end,
            flow: flow.to_string(),
            throughput_bps: bytes as f64 * 8.0 / period,
            delay_ms: last_delay,
            jitter_ms: last_jitter,
            drops,
        });
    }
    out
}

const FLOW_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy)]
enum Metric {
    Delay,
    Jitter,
    Throughput,
}

impl Metric {
    fn value(self, s: &FlowSample) -> f64 {
        match self {
            Metric::Delay => s.delay_ms,
            Metric::Jitter => s.jitter_ms,
            Metric::Throughput => s.throughput_bps / 1000.0,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Delay => "delay (ms)",
            Metric::Jitter => "jitter (ms)",
            Metric::Throughput => "throughput (kbps)",
        }
    }

    fn file(self) -> &'static str {
        match self {
            Metric::Delay => "delay.svg",
            Metric::Jitter => "jitter.svg",
            Metric::Throughput => "throughput.svg",
        }
    }
}

/// Writes delay, jitter and throughput time series to `dir`. Output is a
/// pure function of the samples.
pub fn render(samples: &[FlowSample], dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    for s in samples {
        s.check()?;
    }
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for metric in [Metric::Delay, Metric::Jitter, Metric::Throughput] {
        let reference = matches!(metric, Metric::Jitter).then_some(15.0);
        let svg = plot(samples, metric, reference);
        let path = dir.join(metric.file());
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 1e-9 {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn plot(samples: &[FlowSample], metric: Metric, reference: Option<f64>) -> String {
    const W: f64 = 800.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;

    let mut flows: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in samples {
        flows.entry(&s.flow).or_default().push((s.t, metric.value(s)));
    }
    let (t0, t1) = padded(
        samples.iter().map(|s| s.t).fold(f64::INFINITY, f64::min),
        samples.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut ymax = samples.iter().map(|s| metric.value(s)).fold(0.0, f64::max);
    if let Some(r) = reference {
        ymax = ymax.max(r * 1.2);
    }
    let (y0, y1) = padded(0.0, ymax * 1.05);
    let x = |t: f64| L + (t - t0) / (t1 - t0) * (W - L - R);
    let y = |v: f64| H - B - (v - y0) / (y1 - y0) * (H - T - B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{L} {T}V{:.1}H{:.1}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            L - 6.0,
            y(v) + 4.0,
            v
        );
        let t = t0 + (t1 - t0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"#,
            x(t),
            H - B + 18.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">time (s)</text>"#,
        (L + W - R) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (T + H - B) / 2.0,
        metric.label()
    );
    if let Some(r) = reference {
        let _ = writeln!(
            svg,
            r#"<path d="M{L} {:.1}H{:.1}" stroke="gray" stroke-dasharray="6 4"/>"#,
            y(r),
            W - R
        );
    }
    for (i, (flow, points)) in flows.iter().enumerate() {
        let color = FLOW_COLORS[i % FLOW_COLORS.len()];
        let mut d = String::new();
        for (j, (t, v)) in points.iter().enumerate() {
            let _ = write!(d, "{}{:.1} {:.1}", if j == 0 { "M" } else { "L" }, x(*t), y(*v));
        }
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{flow}</text>"#,
            W - R - 90.0,
            T + 14.0 * (i + 1) as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}
