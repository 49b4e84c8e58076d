//! LSTM and Transformer binary classifiers over 24-hour load profiles.

mod checkpoint;
mod init;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod train;
pub mod transformer;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_weights, encode_weights, load_weights, save_weights, CHECKPOINT_VERSION};
pub use loss::FocalLoss;
pub use lstm::LstmConfig;
pub use optim::{LrSchedule, RmsProp, RmsPropConfig};
pub use train::{input_gradient, loss_and_grads, train_local, TrainConfig, TrainReport};
pub use transformer::TransformerConfig;
pub use weights::{BoundWeights, WeightMap};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::HOURS;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Rows per forward pass when predicting without gradients.
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Lstm, ModelKind::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Architecture {
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

impl Architecture {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Lstm => Architecture::Lstm(LstmConfig::default()),
            ModelKind::Transformer => Architecture::Transformer(TransformerConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Lstm(_) => ModelKind::Lstm,
            Architecture::Transformer(_) => ModelKind::Transformer,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Architecture::Lstm(cfg) if cfg.hidden == 0 => Err(Error::invalid("LSTM hidden size must be positive")),
            Architecture::Lstm(_) => Ok(()),
            Architecture::Transformer(cfg) => {
                cfg.validate()?;
                if cfg.seq_len != HOURS {
                    return Err(Error::invalid(format!("transformer seq_len must be {HOURS}")));
                }
                Ok(())
            }
        }
    }

    fn init(&self, seed: u64) -> WeightMap {
        match self {
            Architecture::Lstm(cfg) => lstm::init(cfg, seed),
            Architecture::Transformer(cfg) => transformer::init(cfg, seed),
        }
    }
}

/// An architecture together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    weights: WeightMap,
}

impl Model {
    /// Seeded Glorot-uniform initialization.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let weights = arch.init(seed);
        Ok(Self { arch, weights })
    }

    /// Wraps existing weights after checking names and shapes.
    pub fn from_weights(arch: Architecture, weights: WeightMap) -> Result<Self> {
        arch.validate()?;
        arch.init(0).check_compatible(&weights)?;
        if !weights.is_finite() {
            return Err(Error::NonFinite { op: "load weights" });
        }
        Ok(Self { arch, weights })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> ModelKind {
        self.arch.kind()
    }

    pub fn weights(&self) -> &WeightMap {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightMap {
        &mut self.weights
    }

    pub fn set_weights(&mut self, weights: WeightMap) -> Result<()> {
        self.weights.check_compatible(&weights)?;
        self.weights = weights;
        Ok(())
    }

    pub fn into_weights(self) -> WeightMap {
        self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.parameter_count()
    }

    pub(crate) fn check_input(shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != HOURS {
            return Err(Error::invalid(format!(
                "wrong sequence length: expected [batch, {HOURS}], got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Records the forward pass; `x` is `[B, 24]`, the result `[B]`.
    pub fn forward(&self, tape: &mut Tape, w: &BoundWeights, x: Var) -> Result<Var> {
        let z = self.logits(tape, w, x, None)?;
        let p = tape.sigmoid(z)?;
        let b = tape.shape(x)[0];
        tape.reshape(p, &[b])
    }

    fn logits(&self, tape: &mut Tape, w: &BoundWeights, x: Var, attention: Option<&mut Vec<Var>>) -> Result<Var> {
        Self::check_input(tape.shape(x))?;
        match &self.arch {
            Architecture::Lstm(cfg) => lstm::logits(cfg, tape, w, x),
            Architecture::Transformer(cfg) => transformer::logits(cfg, tape, w, x, attention),
        }
    }

    /// Anomaly probabilities for every row of `x`, without gradients.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.predict_proba_with(ExecMode::Sequential, x)
    }

    /// As [`Model::predict_proba`], spreading fixed-size chunks over workers.
    pub fn predict_proba_with(&self, mode: ExecMode, x: &Tensor) -> Result<Vec<f64>> {
        Self::check_input(x.shape())?;
        let n = x.shape()[0];
        let starts: Vec<usize> = (0..n).step_by(PREDICT_CHUNK).collect();
        let chunks = par::map(mode, &starts, |&s| {
            let idx: Vec<usize> = (s..(s + PREDICT_CHUNK).min(n)).collect();
            self.predict_chunk(&x.select_rows(&idx))
        });
        let mut out = Vec::with_capacity(n);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn predict_chunk(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let w = self.weights.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let p = self.forward(&mut tape, &w, xv)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Softmax attention per block, each `[B·heads, T, T]`. LSTM models have none.
    pub fn attention_maps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let w = self.weights.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut maps = Vec::new();
        self.logits(&mut tape, &w, xv, Some(&mut maps))?;
        Ok(maps.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}
