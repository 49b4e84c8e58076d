//! Synthetic anomaly injection into daily load profiles.
//!
//! * drop: `x[j] = 0` for `j` in `S..S+l`, `S` in the high window, `l` in {1, 2}
//! * positive spike: `x[j] = x[j] + r*x[j]`, `S` in the low window
//! * negative spike: `x[j] = x[j] - r*x[j]`, `S` in the high window
//!
//! Spikes have `l = 1`, segment spikes `l = 2`. Positions wrap within the
//! same 24-vector, so a length-2 anomaly starting at hour 23 also touches
//! hour 0.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::windows::UsageWindows;
use super::{LoadProfile, HOURS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    None,
    Drop,
    PosSpike,
    NegSpike,
    SegPosSpike,
    SegNegSpike,
}

impl AnomalyKind {
    pub const INJECTED: [AnomalyKind; 5] = [
        AnomalyKind::Drop,
        AnomalyKind::PosSpike,
        AnomalyKind::NegSpike,
        AnomalyKind::SegPosSpike,
        AnomalyKind::SegNegSpike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::None => "none",
            AnomalyKind::Drop => "drop",
            AnomalyKind::PosSpike => "pos_spike",
            AnomalyKind::NegSpike => "neg_spike",
            AnomalyKind::SegPosSpike => "seg_pos_spike",
            AnomalyKind::SegNegSpike => "seg_neg_spike",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [AnomalyKind::None]
            .iter()
            .chain(&Self::INJECTED)
            .copied()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeDirection {
    Positive,
    Negative,
}

/// Mixture over the five injected kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindWeights {
    pub drop: f64,
    pub pos_spike: f64,
    pub neg_spike: f64,
    pub seg_pos_spike: f64,
    pub seg_neg_spike: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        Self {
            drop: 0.2,
            pos_spike: 0.2,
            neg_spike: 0.2,
            seg_pos_spike: 0.2,
            seg_neg_spike: 0.2,
        }
    }
}

impl KindWeights {
    pub fn only(kind: AnomalyKind) -> Self {
        let mut w = Self {
            drop: 0.0,
            pos_spike: 0.0,
            neg_spike: 0.0,
            seg_pos_spike: 0.0,
            seg_neg_spike: 0.0,
        };
        match kind {
            AnomalyKind::Drop | AnomalyKind::None => w.drop = 1.0,
            AnomalyKind::PosSpike => w.pos_spike = 1.0,
            AnomalyKind::NegSpike => w.neg_spike = 1.0,
            AnomalyKind::SegPosSpike => w.seg_pos_spike = 1.0,
            AnomalyKind::SegNegSpike => w.seg_neg_spike = 1.0,
        }
        w
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.drop,
            self.pos_spike,
            self.neg_spike,
            self.seg_pos_spike,
            self.seg_neg_spike,
        ]
    }

    fn draw(&self, rng: &mut impl Rng) -> AnomalyKind {
        let w = self.as_array();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, wk) in AnomalyKind::INJECTED.iter().zip(w) {
            if wk > 0.0 && u < wk {
                return *k;
            }
            u -= wk;
        }
        // rounding fell off the end: last kind with positive weight
        AnomalyKind::INJECTED
            .iter()
            .zip(w)
            .rev()
            .find(|(_, wk)| *wk > 0.0)
            .map(|(k, _)| *k)
            .unwrap_or(AnomalyKind::Drop)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub anomaly_fraction: f64,
    pub kind_weights: KindWeights,
    pub r_range: (f64, f64),
    pub seed: u64,
    /// Clamp negative-spike results at zero. Off by default: the formula has
    /// no clamp and values below zero are left as computed.
    pub clamp_negative: bool,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            anomaly_fraction: 0.10,
            kind_weights: KindWeights::default(),
            r_range: (0.5, 1.5),
            seed: 0,
            clamp_negative: false,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.anomaly_fraction > 0.0 && self.anomaly_fraction < 1.0) {
            errs.push(format!(
                "anomaly_fraction must lie in (0,1), got {}",
                self.anomaly_fraction
            ));
        }
        let (lo, hi) = self.r_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            errs.push(format!("r_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        let w = self.kind_weights.as_array();
        if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push("kind_weights must be non-negative and sum to 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Where and how an anomaly was placed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub kind: AnomalyKind,
    pub start: usize,
    pub len: usize,
    /// Spike amplitude `r`; zero for drops.
    pub amplitude: f64,
    /// Index of the clean profile the anomaly was derived from.
    pub source: usize,
}

fn check_placement(start: usize, len: usize) -> Result<()> {
    if !(1..=2).contains(&len) {
        return Err(Error::invalid(format!("anomaly length must be 1 or 2, got {len}")));
    }
    if start >= HOURS {
        return Err(Error::invalid(format!("start hour {start} out of range")));
    }
    Ok(())
}

pub fn inject_drop(profile: &LoadProfile, start: usize, len: usize) -> Result<LoadProfile> {
    check_placement(start, len)?;
    let mut out = profile.clone();
    for i in 0..len {
        out.values[(start + i) % HOURS] = 0.0;
    }
    Ok(out)
}

pub fn inject_spike(
    profile: &LoadProfile,
    start: usize,
    len: usize,
    r: f64,
    direction: SpikeDirection,
    r_range: (f64, f64),
) -> Result<LoadProfile> {
    check_placement(start, len)?;
    if !(r >= r_range.0 && r <= r_range.1) {
        return Err(Error::invalid(format!(
            "spike amplitude {r} outside [{}, {}]",
            r_range.0, r_range.1
        )));
    }
    let mut out = profile.clone();
    for i in 0..len {
        let x = &mut out.values[(start + i) % HOURS];
        *x = match direction {
            SpikeDirection::Positive => *x + r * *x,
            SpikeDirection::Negative => *x - r * *x,
        };
    }
    Ok(out)
}

/// Draws and applies one anomaly to `profile`.
pub(crate) fn inject_random(
    profile: &LoadProfile,
    source: usize,
    windows: &UsageWindows,
    cfg: &AnomalyConfig,
    rng: &mut impl Rng,
) -> Result<(LoadProfile, Injection)> {
    let kind = cfg.kind_weights.draw(rng);
    let pick = |rng: &mut dyn rand::RngCore, hours: Vec<usize>| hours[rng.random_range(0..hours.len())];
    let (lo, hi) = cfg.r_range;
    let (out, start, len, amplitude) = match kind {
        AnomalyKind::Drop => {
            let start = pick(rng, windows.high_hours());
            let len = rng.random_range(1..=2);
            (inject_drop(profile, start, len)?, start, len, 0.0)
        }
        _ => {
            let (direction, len) = match kind {
                AnomalyKind::PosSpike => (SpikeDirection::Positive, 1),
                AnomalyKind::SegPosSpike => (SpikeDirection::Positive, 2),
                AnomalyKind::NegSpike => (SpikeDirection::Negative, 1),
                _ => (SpikeDirection::Negative, 2),
            };
            let hours = match direction {
                SpikeDirection::Positive => windows.low_hours(),
                SpikeDirection::Negative => windows.high_hours(),
            };
            let start = pick(rng, hours);
            let r = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let mut out = inject_spike(profile, start, len, r, direction, cfg.r_range)?;
            if cfg.clamp_negative {
                out.values.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            (out, start, len, r)
        }
    };
    Ok((
        out,
        Injection {
            kind,
            start,
            len,
            amplitude,
            source,
        },
    ))
}

/// Indices of the clean profiles that receive an anomalous copy.
pub(crate) fn choose_sources(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones() -> LoadProfile {
        LoadProfile {
            values: [1.0; HOURS],
            day_index: 0,
        }
    }

    fn changed(a: &LoadProfile, b: &LoadProfile) -> Vec<usize> {
        (0..HOURS).filter(|&i| a.values[i] != b.values[i]).collect()
    }

    #[test]
    fn drop_zeroes_window() {
        let p = ones();
        let d = inject_drop(&p, 18, 2).unwrap();
        assert_eq!(changed(&p, &d), vec![18, 19]);
        assert_eq!(d.values[18], 0.0);
        assert_eq!(changed(&p, &inject_drop(&p, 5, 1).unwrap()).len(), 1);
        assert_eq!(changed(&p, &inject_drop(&p, 23, 2).unwrap()), vec![0, 23]);
        assert!(inject_drop(&p, 5, 3).is_err());
        assert!(inject_drop(&p, 5, 0).is_err());
    }

    #[test]
    fn spikes_follow_formulas() {
        let mut p = ones();
        p.values[6] = 2.0;
        p.values[19] = 2.0;
        let pos = inject_spike(&p, 6, 1, 1.0, SpikeDirection::Positive, (0.5, 1.5)).unwrap();
        assert_eq!(pos.values[6], 4.0);
        let neg = inject_spike(&p, 19, 1, 0.5, SpikeDirection::Negative, (0.5, 1.5)).unwrap();
        assert_eq!(neg.values[19], 1.0);
        let seg = inject_spike(&p, 7, 2, 0.7, SpikeDirection::Positive, (0.5, 1.5)).unwrap();
        assert_eq!(changed(&p, &seg), vec![7, 8]);
        // r > 1 on a negative spike goes below zero and is kept
        let deep = inject_spike(&p, 19, 1, 1.5, SpikeDirection::Negative, (0.5, 1.5)).unwrap();
        assert_eq!(deep.values[19], -1.0);
        assert!(inject_spike(&p, 6, 1, 1.6, SpikeDirection::Positive, (0.5, 1.5)).is_err());
        assert!(inject_spike(&p, 6, 3, 1.0, SpikeDirection::Positive, (0.5, 1.5)).is_err());
    }

    #[test]
    fn degenerate_weights_pick_single_kind() {
        let mut rng = crate::seed::rng(3);
        let w = KindWeights::only(AnomalyKind::Drop);
        assert!((0..200).all(|_| w.draw(&mut rng) == AnomalyKind::Drop));
    }

    #[test]
    fn config_validation() {
        assert!(AnomalyConfig::default().validate().is_ok());
        let bad = AnomalyConfig {
            anomaly_fraction: 1.0,
            r_range: (0.0, 1.0),
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AnomalyKind::INJECTED {
            assert_eq!(AnomalyKind::parse(k.name()), Some(k));
        }
    }
}
