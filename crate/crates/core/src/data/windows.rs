//! High and low usage windows over the 24 hours of a day.

use serde::{Deserialize, Serialize};

use super::LoadProfile;
use crate::error::{Error, Result};

/// Contiguous circular run of hours `start, start+1, ... (mod 24)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourWindow {
    pub start: usize,
    pub len: usize,
}

impl HourWindow {
    pub fn contains(&self, hour: usize) -> bool {
        (hour + 24 - self.start) % 24 < self.len
    }

    pub fn hours(&self) -> Vec<usize> {
        (0..self.len).map(|i| (self.start + i) % 24).collect()
    }

    fn overlaps(&self, other: &HourWindow) -> bool {
        self.hours().iter().any(|&h| other.contains(h))
    }
}

/// Where each anomaly kind may start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageWindows {
    pub low: HourWindow,
    pub high: HourWindow,
}

impl UsageWindows {
    pub fn new(low: HourWindow, high: HourWindow) -> Result<Self> {
        let valid = |w: &HourWindow| w.start < 24 && (1..=24).contains(&w.len);
        if !valid(&low) || !valid(&high) {
            return Err(Error::invalid("usage windows must be non-empty and start within 0..24"));
        }
        if low.overlaps(&high) {
            return Err(Error::invalid("low and high usage windows overlap"));
        }
        Ok(Self { low, high })
    }

    /// Low 4 a.m.–10 a.m. and high 6 p.m.–1 a.m., as observed on real
    /// residential data.
    pub fn residential_default() -> Self {
        Self {
            low: HourWindow { start: 4, len: 6 },
            high: HourWindow { start: 18, len: 7 },
        }
    }

    pub fn low_hours(&self) -> Vec<usize> {
        self.low.hours()
    }

    pub fn high_hours(&self) -> Vec<usize> {
        self.high.hours()
    }
}

pub const DEFAULT_LOW_LEN: usize = 6;
pub const DEFAULT_HIGH_LEN: usize = 7;

/// Per-hour means across profiles.
pub fn hourly_means(profiles: &[LoadProfile]) -> [f64; 24] {
    let mut m = [0.0; 24];
    for p in profiles {
        for (acc, v) in m.iter_mut().zip(p.values.iter()) {
            *acc += v;
        }
    }
    let n = profiles.len().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Picks the contiguous circular window of `low_len` hours with the smallest
/// total mean consumption, then the window of `high_len` hours with the
/// largest total among those disjoint from it. Ties go to the lower start hour.
pub fn detect_usage_windows(profiles: &[LoadProfile], low_len: usize, high_len: usize) -> Result<UsageWindows> {
    if profiles.is_empty() {
        return Err(Error::invalid("detect_usage_windows: no profiles"));
    }
    if low_len == 0 || high_len == 0 || low_len + high_len > 24 {
        return Err(Error::invalid(
            "window lengths must be positive and fit in a day together",
        ));
    }
    let means = hourly_means(profiles);
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return Err(Error::Degenerate(
            "no distinct windows: hourly means are constant".into(),
        ));
    }
    let window_sum = |w: &HourWindow| w.hours().iter().map(|&h| means[h]).sum::<f64>();
    let low = (0..24)
        .map(|start| HourWindow { start, len: low_len })
        .fold(None::<(HourWindow, f64)>, |best, w| {
            let s = window_sum(&w);
            match best {
                Some((_, b)) if b <= s => best,
                _ => Some((w, s)),
            }
        })
        .map(|(w, _)| w)
        .expect("24 candidate windows");
    let high = (0..24)
        .map(|start| HourWindow { start, len: high_len })
        .filter(|w| !w.overlaps(&low))
        .fold(None::<(HourWindow, f64)>, |best, w| {
            let s = window_sum(&w);
            match best {
                Some((_, b)) if b >= s => best,
                _ => Some((w, s)),
            }
        })
        .map(|(w, _)| w)
        .ok_or_else(|| Error::Degenerate("no high window disjoint from the low window".into()))?;
    UsageWindows::new(low, high)
}
