//! Offline statistics over inactivity durations: tail-quartile summaries,
//! duration-range histogram, exponential fit and a time-of-day profile.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracker::InactivityEvent;

/// How the "max 25% / min 25%" columns are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// Mean of the largest / smallest `ceil(n/4)` values.
    #[default]
    QuartileMean,
    /// 75th / 25th percentile, linearly interpolated.
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub median_s: f64,
    pub max25_s: f64,
    pub min25_s: f64,
}

fn sorted(durations: &[f64]) -> Result<Vec<f64>> {
    if durations.is_empty() {
        return Err(Error::Analytics("no durations".into()));
    }
    if durations.iter().any(|d| !d.is_finite()) {
        return Err(Error::Analytics("non-finite duration".into()));
    }
    let mut v = durations.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn percentile_of_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(durations: &[f64]) -> Result<SummaryStats> {
    summarize_with(durations, TailMode::default())
}

pub fn summarize_with(durations: &[f64], mode: TailMode) -> Result<SummaryStats> {
    let v = sorted(durations)?;
    let n = v.len();
    let (max25_s, min25_s) = match mode {
        TailMode::QuartileMean => {
            let q = n.div_ceil(4);
            (mean(&v[n - q..]), mean(&v[..q]))
        }
        TailMode::Percentile => (percentile_of_sorted(&v, 0.75), percentile_of_sorted(&v, 0.25)),
    };
    Ok(SummaryStats {
        count: n,
        median_s: median_of_sorted(&v),
        max25_s,
        min25_s,
    })
}

/// Lower bucket edges in seconds; the last bucket is open-ended.
pub const BUCKET_EDGES_S: [f64; 8] = [1.0, 2.0, 5.0, 10.0, 30.0, 60.0, 200.0, 500.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo_s: f64,
    /// `None` for the open last bucket.
    pub hi_s: Option<f64>,
    pub count: usize,
    pub percent: f64,
    pub cumulative_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub buckets: Vec<Bucket>,
    /// Durations under one second, not counted in any bucket.
    pub below_floor: usize,
}

pub fn bucket_index(d: f64) -> Option<usize> {
    if d.is_nan() || d < BUCKET_EDGES_S[0] {
        return None;
    }
    Some(BUCKET_EDGES_S.iter().rposition(|&e| d >= e).expect("d >= first edge"))
}

pub fn histogram(durations: &[f64]) -> Histogram {
    let mut counts = [0usize; BUCKET_EDGES_S.len()];
    let mut below_floor = 0;
    for &d in durations {
        match bucket_index(d) {
            Some(i) => counts[i] += 1,
            None => below_floor += 1,
        }
    }
    let total: usize = counts.iter().sum();
    let mut cum = 0;
    let buckets = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            cum += count;
            let pct = |c: usize| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
            Bucket {
                lo_s: BUCKET_EDGES_S[i],
                hi_s: BUCKET_EDGES_S.get(i + 1).copied(),
                count,
                percent: pct(count),
                // Exact 100 at the end rather than a rounded sum.
                cumulative_percent: if cum == total && total > 0 { 100.0 } else { pct(cum) },
            }
        })
        .collect();
    Histogram { buckets, below_floor }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub lambda: f64,
    pub mean_s: f64,
}

impl ExponentialFit {
    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.lambda * (-self.lambda * x).exp()
        }
    }

    pub fn log_likelihood(lambda: f64, xs: &[f64]) -> f64 {
        xs.len() as f64 * lambda.ln() - lambda * xs.iter().sum::<f64>()
    }
}

/// Maximum-likelihood exponential rate: one over the sample mean.
pub fn fit_exponential(durations: &[f64]) -> Result<ExponentialFit> {
    if durations.is_empty() {
        return Err(Error::Analytics("no durations".into()));
    }
    if durations.iter().any(|&d| !d.is_finite() || d < 0.0) {
        return Err(Error::Analytics("durations must be finite and >= 0".into()));
    }
    let m = mean(durations);
    if m == 0.0 {
        return Err(Error::Analytics("mean duration is zero".into()));
    }
    Ok(ExponentialFit {
        lambda: 1.0 / m,
        mean_s: m,
    })
}

/// Maps stream timestamps to local wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Clock {
    /// Unix time (ms) of stream timestamp 0.
    pub origin_ms: i64,
    pub utc_offset_min: i32,
}

impl Clock {
    pub fn hour_of(&self, ts_ms: u64) -> u8 {
        let local = self.origin_ms + ts_ms as i64 + self.utc_offset_min as i64 * 60_000;
        (local.div_euclid(3_600_000).rem_euclid(24)) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour: u8,
    pub count: usize,
    pub summary: Option<SummaryStats>,
}

/// Per hour of day, by the local hour of each event's start.
pub fn hourly_profile(events: &[InactivityEvent], clock: Clock, mode: TailMode) -> Vec<HourRow> {
    let mut by_hour: Vec<Vec<f64>> = vec![Vec::new(); 24];
    for e in events {
        by_hour[clock.hour_of(e.start_ms) as usize].push(e.dur_s);
    }
    by_hour
        .into_iter()
        .enumerate()
        .map(|(h, d)| HourRow {
            hour: h as u8,
            count: d.len(),
            summary: summarize_with(&d, mode).ok(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub count: usize,
    pub tail_mode: TailMode,
    pub summary: SummaryStats,
    /// The other tail definition, for comparison.
    pub alt_summary: SummaryStats,
    pub histogram: Histogram,
    pub exponential: ExponentialFit,
    pub hourly: Vec<HourRow>,
}

pub fn report(events: &[InactivityEvent], clock: Clock, mode: TailMode) -> Result<StatsReport> {
    let d: Vec<f64> = events.iter().map(|e| e.dur_s).collect();
    let alt = match mode {
        TailMode::QuartileMean => TailMode::Percentile,
        TailMode::Percentile => TailMode::QuartileMean,
    };
    Ok(StatsReport {
        count: d.len(),
        tail_mode: mode,
        summary: summarize_with(&d, mode)?,
        alt_summary: summarize_with(&d, alt)?,
        histogram: histogram(&d),
        exponential: fit_exponential(&d)?,
        hourly: hourly_profile(events, clock, mode),
    })
}

impl StatsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let t = &self.summary;
        let _ = writeln!(s, "events: {}", self.count);
        let _ = writeln!(s, "{:>10} {:>10} {:>10}", "Median", "Max 25%", "Min 25%");
        let _ = writeln!(s, "{:>10.2} {:>10.2} {:>10.2}", t.median_s, t.max25_s, t.min25_s);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>12}", "range (s)", "count", "%", "cumulative %");
        for b in &self.histogram.buckets {
            let range = match b.hi_s {
                Some(hi) => format!("[{}, {})", b.lo_s, hi),
                None => format!("[{}, inf)", b.lo_s),
            };
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>8.2} {:>12.2}",
                range, b.count, b.percent, b.cumulative_percent
            );
        }
        let _ = writeln!(s);
        let e = &self.exponential;
        let _ = writeln!(s, "exponential fit: lambda = {:.6} /s, mean = {:.3} s", e.lambda, e.mean_s);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>4} {:>6} {:>8} {:>8} {:>8}", "hour", "count", "median", "max25", "min25");
        for r in &self.hourly {
            match &r.summary {
                Some(t) => {
                    let _ = writeln!(
                        s,
                        "{:>4} {:>6} {:>8.2} {:>8.2} {:>8.2}",
                        r.hour, r.count, t.median_s, t.max25_s, t.min25_s
                    );
                }
                None => {
                    let _ = writeln!(s, "{:>4} {:>6} {:>8} {:>8} {:>8}", r.hour, 0, "-", "-", "-");
                }
            }
        }
        s
    }
}

/// Duration distribution in `bin_s`-wide bins with the fitted density
/// evaluated at each bin center.
pub fn distribution_csv(durations: &[f64], fit: &ExponentialFit, bin_s: f64) -> String {
    let mut s = String::from("bin_start_s,bin_end_s,count,density,exp_pdf\n");
    if durations.is_empty() {
        return s;
    }
    let max = durations.iter().cloned().fold(0.0, f64::max);
    let bins = ((max / bin_s).floor() as usize) + 1;
    let mut counts = vec![0usize; bins];
    for &d in durations {
        counts[((d / bin_s).floor() as usize).min(bins - 1)] += 1;
    }
    let n = durations.len() as f64;
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 * bin_s;
        let hi = lo + bin_s;
        let _ = writeln!(
            s,
            "{lo},{hi},{c},{:.6},{:.6}",
            *c as f64 / (n * bin_s),
            fit.pdf((lo + hi) / 2.0)
        );
    }
    s
}
