//! Classification metrics and attack success rate.
//!
//! ASR counts samples whose *predicted* label changes because of the attack:
//! clean-vs-attacked inputs for inference-time attacks, clean-vs-attacked
//! models for training-time attacks. The literal reading (attacked prediction
//! against ground truth) is available through [`AsrReading::Literal`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fmt::pct2;
use crate::models::Model;
use crate::par::ExecMode;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Label 1 exactly when `p >= threshold`.
pub fn threshold_labels(p: &[f64], threshold: f64) -> Vec<u8> {
    p.iter().map(|&v| u8::from(v >= threshold)).collect()
}

pub fn classify(model: &Model, x: &Tensor, threshold: f64) -> Result<Vec<u8>> {
    classify_with(model, x, threshold, ExecMode::Sequential)
}

pub fn classify_with(model: &Model, x: &Tensor, threshold: f64, mode: ExecMode) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(threshold_labels(&model.predict_proba_with(mode, x)?, threshold))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::invalid("metrics of an empty prediction set"));
        }
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let accuracy = ratio(tp + tn, total);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        Ok(Self {
            accuracy,
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
            degenerate,
        })
    }
}

/// Positive class is the anomaly label 1.
pub fn compute_metrics(pred: &[u8], truth: &[u8]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op: "compute_metrics",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => return Err(Error::invalid("labels must be 0 or 1")),
        }
    }
    Metrics::from_counts(tp, fp, tn, fn_)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsrProtocol {
    InferenceAttack,
    TrainingAttack,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsrReading {
    /// Prediction before the attack vs prediction after it.
    #[default]
    Changed,
    /// Prediction after the attack vs ground truth.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub flipped: usize,
    pub total: usize,
    pub asr: f64,
    pub protocol: AsrProtocol,
}

/// Fraction of positions where `a` and `b` disagree.
pub fn asr_from_labels(a: &[u8], b: &[u8], protocol: AsrProtocol) -> Result<AsrReport> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "asr",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("attack success rate of an empty set"));
    }
    let flipped = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(AsrReport {
        flipped,
        total: a.len(),
        asr: flipped as f64 / a.len() as f64,
        protocol,
    })
}

/// `before`/`after` are predictions without and with the attack.
pub fn asr_with_reading(
    reading: AsrReading,
    before: &[u8],
    after: &[u8],
    truth: &[u8],
    protocol: AsrProtocol,
) -> Result<AsrReport> {
    match reading {
        AsrReading::Changed => asr_from_labels(before, after, protocol),
        AsrReading::Literal => asr_from_labels(truth, after, protocol),
    }
}

pub fn asr_inference(model: &Model, x_clean: &Tensor, x_adv: &Tensor, threshold: f64) -> Result<AsrReport> {
    if x_clean.shape() != x_adv.shape() {
        return Err(Error::Shape {
            op: "asr_inference",
            lhs: x_clean.shape().to_vec(),
            rhs: x_adv.shape().to_vec(),
        });
    }
    let before = classify(model, x_clean, threshold)?;
    let after = classify(model, x_adv, threshold)?;
    asr_from_labels(&before, &after, AsrProtocol::InferenceAttack)
}

pub fn asr_training(clean: &Model, attacked: &Model, x_test: &Tensor, threshold: f64) -> Result<AsrReport> {
    let before = classify(clean, x_test, threshold)?;
    let after = classify(attacked, x_test, threshold)?;
    asr_from_labels(&before, &after, AsrProtocol::TrainingAttack)
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub setting: String,
    pub attack: String,
    pub metrics: Metrics,
    pub asr: Option<f64>,
}

pub const METRICS_HEADER: [&str; 7] = ["setting", "attack", "acc", "prec", "rec", "f1", "asr"];

/// `setting,attack,acc,prec,rec,f1,asr` as percentages with two decimals;
/// `asr` is empty when no attack was applied.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.setting.clone(),
            r.attack.clone(),
            pct2(m.accuracy),
            pct2(m.precision),
            pct2(m.recall),
            pct2(m.f1),
            r.asr.map(pct2).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
