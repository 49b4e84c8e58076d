use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::anomaly::{choose_sources, inject_random, AnomalyConfig, AnomalyKind, Injection};
use super::series::HourlySeries;
use super::windows::{detect_usage_windows, UsageWindows, DEFAULT_HIGH_LEN, DEFAULT_LOW_LEN};
use super::{segment_daily, LoadProfile, HOURS};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::{fmt, seed};

/// Profiles with binary labels; label 1 exactly when an anomaly was injected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledDataset {
    pub profiles: Vec<LoadProfile>,
    pub labels: Vec<u8>,
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Placement record for injected samples, `None` for clean ones.
    pub injections: Vec<Option<Injection>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    fn push(&mut self, profile: LoadProfile, injection: Option<Injection>) {
        let kind = injection.map_or(AnomalyKind::None, |i| i.kind);
        self.profiles.push(profile);
        self.labels.push(u8::from(kind != AnomalyKind::None));
        self.anomaly_kinds.push(kind);
        self.injections.push(injection);
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut out = Self::default();
        for &i in idx {
            out.push(self.profiles[i].clone(), self.injections[i]);
        }
        out
    }

    /// Checks the parallel-array and label/kind invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.profiles.len();
        if self.labels.len() != n || self.anomaly_kinds.len() != n || self.injections.len() != n {
            return Err(Error::invalid("dataset arrays differ in length"));
        }
        let consistent = self
            .labels
            .iter()
            .zip(&self.anomaly_kinds)
            .all(|(&l, &k)| (l == 1) == (k != AnomalyKind::None) && l <= 1);
        if !consistent {
            return Err(Error::invalid("labels disagree with anomaly kinds"));
        }
        Ok(())
    }

    pub fn to_samples(&self) -> Samples {
        let mut data = Vec::with_capacity(self.len() * HOURS);
        for p in &self.profiles {
            data.extend_from_slice(&p.values);
        }
        Samples {
            x: Tensor::new(vec![self.len(), HOURS], data).expect("n x 24"),
            y: self.labels.clone(),
        }
    }

    /// Writes `v0..v23,label,kind`, values with 12 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..HOURS).map(|i| format!("v{i}")).collect();
        header.extend(["label".into(), "kind".into()]);
        w.write_record(&header)?;
        for ((p, l), k) in self.profiles.iter().zip(&self.labels).zip(&self.anomaly_kinds) {
            let mut rec: Vec<String> = p.values.iter().map(|&v| fmt::sig12(v)).collect();
            rec.push(l.to_string());
            rec.push(k.name().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: &str| Error::Ingest {
                row: i + 1,
                message: m.to_string(),
            };
            if rec.len() != HOURS + 2 {
                return Err(bad("expected 26 columns"));
            }
            let mut values = [0.0; HOURS];
            for (j, v) in values.iter_mut().enumerate() {
                *v = rec[j].parse().map_err(|_| bad("unparseable value"))?;
            }
            let kind = AnomalyKind::parse(&rec[HOURS + 1]).ok_or_else(|| bad("unknown kind"))?;
            out.profiles.push(LoadProfile { values, day_index: i });
            out.labels
                .push(rec[HOURS].parse().map_err(|_| bad("unparseable label"))?);
            out.anomaly_kinds.push(kind);
            out.injections.push(None);
        }
        out.validate()?;
        Ok(out)
    }
}

/// Model-facing view: `x` is `[n, 24]`, `y` holds 0/1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub x: Tensor,
    pub y: Vec<u8>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn concat(parts: &[&Samples]) -> Samples {
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut x = Vec::with_capacity(n * HOURS);
        let mut y = Vec::with_capacity(n);
        for p in parts {
            x.extend_from_slice(p.x.data());
            y.extend_from_slice(&p.y);
        }
        Samples {
            x: Tensor::new(vec![n, HOURS], x).expect("n x 24"),
            y,
        }
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Appends one anomalous copy for a `anomaly_fraction` share of the profiles.
/// The clean originals come first, labeled 0.
pub fn build_dataset(profiles: &[LoadProfile], windows: &UsageWindows, cfg: &AnomalyConfig) -> Result<LabeledDataset> {
    if profiles.is_empty() {
        return Err(Error::invalid("build_dataset: no profiles"));
    }
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let sources = choose_sources(profiles.len(), cfg.anomaly_fraction, &mut rng);
    let mut out = LabeledDataset::default();
    for p in profiles {
        out.push(p.clone(), None);
    }
    for &src in &sources {
        let (anomalous, inj) = inject_random(&profiles[src], src, windows, cfg, &mut rng)?;
        out.push(anomalous, Some(inj));
    }
    Ok(out)
}

/// Min-max bounds of a household's clean data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

impl Scaling {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }

    pub fn invert_dataset(&self, ds: &LabeledDataset) -> LabeledDataset {
        map_values(ds, |v| self.invert(v))
    }
}

fn map_values(ds: &LabeledDataset, f: impl Fn(f64) -> f64) -> LabeledDataset {
    let mut out = ds.clone();
    for p in &mut out.profiles {
        p.values.iter_mut().for_each(|v| *v = f(*v));
    }
    out
}

/// Scales with the bounds of the clean (label 0) profiles, so anomalies can
/// land outside `[0, 1]`.
pub fn normalize(ds: &LabeledDataset) -> Result<(LabeledDataset, Scaling)> {
    let (min, max) = ds
        .profiles
        .iter()
        .zip(&ds.labels)
        .filter(|(_, &l)| l == 0)
        .flat_map(|(p, _)| p.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(max > min) {
        return Err(Error::Degenerate("constant series: cannot min-max scale".into()));
    }
    let s = Scaling { min, max };
    Ok((map_values(ds, |v| s.apply(v)), s))
}

/// Stratified split. Each class keeps at least one sample on either side.
pub fn split(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "split: class {class} has {} samples, need at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let k = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub anomaly: AnomalyConfig,
    pub train_fraction: f64,
    /// Fixed windows; detected from the pooled profiles when absent.
    pub windows: Option<UsageWindows>,
    pub low_window_len: usize,
    pub high_window_len: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            anomaly: AnomalyConfig::default(),
            train_fraction: 0.8,
            windows: None,
            low_window_len: DEFAULT_LOW_LEN,
            high_window_len: DEFAULT_HIGH_LEN,
            seed: 0,
        }
    }
}

/// One household's prepared, normalized data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    pub household_id: String,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub scaling: Scaling,
}

/// Full pipeline: segment, detect windows over all households, inject in raw
/// kWh, normalize per household, then split.
pub fn prepare_clients(series: &[HourlySeries], cfg: &PipelineConfig) -> Result<(Vec<ClientData>, UsageWindows)> {
    let profiles: Vec<Vec<LoadProfile>> = series.iter().map(segment_daily).collect();
    let windows = match cfg.windows {
        Some(w) => w,
        None => {
            let pooled: Vec<LoadProfile> = profiles.iter().flatten().cloned().collect();
            detect_usage_windows(&pooled, cfg.low_window_len, cfg.high_window_len)?
        }
    };
    let clients = series
        .iter()
        .zip(&profiles)
        .enumerate()
        .map(|(h, (s, p))| {
            let anomaly = AnomalyConfig {
                seed: seed::derive(cfg.seed, &[seed::stream::ANOMALY, h as u64]),
                ..cfg.anomaly.clone()
            };
            let ds = build_dataset(p, &windows, &anomaly)?;
            let (ds, scaling) = normalize(&ds)?;
            let (train, test) = split(
                &ds,
                cfg.train_fraction,
                seed::derive(cfg.seed, &[seed::stream::SPLIT, h as u64]),
            )?;
            Ok(ClientData {
                household_id: s.household_id.clone(),
                train,
                test,
                scaling,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((clients, windows))
}
