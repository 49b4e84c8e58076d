//! White-box gradient-sign attacks (FGSM, PGD) and the naive baselines
//! (additive Gaussian noise, label flipping).
//!
//! All input perturbations act on normalized profiles, so `epsilon` is
//! dimensionless. Nothing here mutates the model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sign, Tensor};
use crate::data::{AnomalyKind, HOURS};
use crate::error::{Error, Result};
use crate::models::{input_gradient, FocalLoss, Model};
use crate::par::{self, ExecMode};
use crate::{fmt as numfmt, seed};

/// Rows per input-gradient pass.
const GRAD_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    #[default]
    None,
    Fgsm,
    Pgd,
    Awgn,
    LabelFlip,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 5] = [
        AttackFamily::None,
        AttackFamily::Fgsm,
        AttackFamily::Pgd,
        AttackFamily::Awgn,
        AttackFamily::LabelFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::None => "none",
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::Awgn => "awgn",
            AttackFamily::LabelFlip => "label_flip",
        }
    }

    /// Whether the attack changes inputs rather than labels.
    pub fn perturbs_inputs(self) -> bool {
        matches!(self, AttackFamily::Fgsm | AttackFamily::Pgd | AttackFamily::Awgn)
    }

    pub fn uses_gradients(self) -> bool {
        matches!(self, AttackFamily::Fgsm | AttackFamily::Pgd)
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        AttackFamily::ALL
            .into_iter()
            .find(|f| f.name() == norm || (norm == "labelflip" && *f == AttackFamily::LabelFlip))
            .ok_or_else(|| Error::invalid(format!("unknown attack family `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub family: AttackFamily,
    /// FGSM magnitude and PGD step size.
    pub epsilon: f64,
    pub pgd_iters: usize,
    pub awgn_variance: f64,
    pub flip_fraction: f64,
    /// Clip every PGD iterate into the ℓ∞ ball around the clean input.
    pub project_linf: bool,
    /// Ball radius for `project_linf`; `epsilon` when unset.
    pub ball_radius: Option<f64>,
    /// Clip perturbed values into `[0, 1]`.
    pub clamp: bool,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            family: AttackFamily::None,
            epsilon: 0.5,
            pgd_iters: 10,
            awgn_variance: 0.1,
            flip_fraction: 1.0,
            project_linf: false,
            ball_radius: None,
            clamp: false,
            seed: 0,
        }
    }
}

impl AttackSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn of(family: AttackFamily) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Every violated constraint, or nothing.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            v.push(format!(
                "attack.epsilon must be a finite value >= 0, got {}",
                self.epsilon
            ));
        }
        if self.pgd_iters == 0 {
            v.push("attack.pgd_iters must be >= 1".into());
        }
        if !(self.awgn_variance >= 0.0 && self.awgn_variance.is_finite()) {
            v.push(format!("attack.awgn_variance must be >= 0, got {}", self.awgn_variance));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            v.push(format!(
                "attack.flip_fraction must lie in [0, 1], got {}",
                self.flip_fraction
            ));
        }
        if let Some(r) = self.ball_radius {
            if !(r >= 0.0) {
                v.push(format!("attack.ball_radius must be >= 0, got {r}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn projection(&self) -> Option<f64> {
        self.project_linf.then(|| self.ball_radius.unwrap_or(self.epsilon))
    }

    /// Applies the attack to a batch. Gradient attacks read `model`; the
    /// others ignore it. Returns the (possibly) perturbed inputs and labels.
    pub fn apply(
        &self,
        model: &Model,
        x: &Tensor,
        y: &[u8],
        loss: &FocalLoss,
        mode: ExecMode,
    ) -> Result<(Tensor, Vec<u8>)> {
        self.validate()?;
        let x_adv = match self.family {
            AttackFamily::None | AttackFamily::LabelFlip => x.clone(),
            AttackFamily::Fgsm => pgd_with(model, x, y, self.epsilon, 1, None, loss, mode)?,
            AttackFamily::Pgd => pgd_with(model, x, y, self.epsilon, self.pgd_iters, self.projection(), loss, mode)?,
            AttackFamily::Awgn => awgn(x, self.awgn_variance, self.seed)?,
        };
        let x_adv = if self.clamp && self.family.perturbs_inputs() {
            x_adv.map(|v| v.clamp(0.0, 1.0))
        } else {
            x_adv
        };
        let y_adv = match self.family {
            AttackFamily::LabelFlip => label_flip(y, self.flip_fraction, self.seed)?,
            _ => y.to_vec(),
        };
        Ok((x_adv, y_adv))
    }
}

/// `x + ε·sign(g)` elementwise.
fn signed_step(x: &Tensor, g: &Tensor, eps: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| xi + eps * sign(gi))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Input gradient computed in fixed-size row chunks. Each chunk's loss is its
/// own mean, which rescales the gradient by a positive factor and leaves its
/// sign unchanged.
fn chunked_input_gradient(model: &Model, x: &Tensor, y: &[u8], loss: &FocalLoss, mode: ExecMode) -> Result<Tensor> {
    Model::check_input(x.shape())?;
    let n = x.shape()[0];
    if y.len() != n {
        return Err(Error::Shape {
            op: "attack labels",
            lhs: x.shape().to_vec(),
            rhs: vec![y.len()],
        });
    }
    let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
    let parts = par::map(mode, &starts, |&s| {
        let idx: Vec<usize> = (s..(s + GRAD_CHUNK).min(n)).collect();
        input_gradient(model, &x.select_rows(&idx), &y[s..s + idx.len()], loss)
    });
    let mut data = Vec::with_capacity(n * HOURS);
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Tensor::new(vec![n, HOURS], data)
}

/// `x_adv = x + ε·sign(∇ₓJ(θ, x, y))`.
pub fn fgsm(model: &Model, x: &Tensor, y: &[u8], eps: f64, loss: &FocalLoss) -> Result<Tensor> {
    pgd_with(model, x, y, eps, 1, None, loss, ExecMode::Sequential)
}

/// `iters` signed-gradient steps of size `eps` starting from `x`. With
/// `projection = Some(r)` each iterate is clipped to `[x - r, x + r]`.
pub fn pgd(
    model: &Model,
    x: &Tensor,
    y: &[u8],
    eps: f64,
    iters: usize,
    projection: Option<f64>,
    loss: &FocalLoss,
) -> Result<Tensor> {
    pgd_with(model, x, y, eps, iters, projection, loss, ExecMode::Sequential)
}

#[allow(clippy::too_many_arguments)]
fn pgd_with(
    model: &Model,
    x: &Tensor,
    y: &[u8],
    eps: f64,
    iters: usize,
    projection: Option<f64>,
    loss: &FocalLoss,
    mode: ExecMode,
) -> Result<Tensor> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {eps}")));
    }
    if iters == 0 {
        return Err(Error::invalid("PGD needs at least one iteration"));
    }
    let mut adv = x.clone();
    for _ in 0..iters {
        let g = chunked_input_gradient(model, &adv, y, loss, mode)?;
        adv = signed_step(&adv, &g, eps);
        if let Some(r) = projection {
            for (a, &c) in adv.data_mut().iter_mut().zip(x.data()) {
                *a = a.clamp(c - r, c + r);
            }
        }
    }
    Ok(adv)
}

/// `x + n` with `n ~ N(0, variance)` i.i.d.
pub fn awgn(x: &Tensor, variance: f64, seed: u64) -> Result<Tensor> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let data = x.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Inverts `floor(fraction · n)` labels chosen uniformly without replacement.
pub fn label_flip(y: &[u8], fraction: f64, seed: u64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "flip fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let k = (fraction * y.len() as f64).floor() as usize;
    let mut out = y.to_vec();
    for i in index::sample(&mut seed::rng(seed), y.len(), k) {
        out[i] = 1 - out[i];
    }
    Ok(out)
}

/// Dataset CSV layout followed by `attack_family,epsilon`.
pub fn write_adversarial_csv(
    path: impl AsRef<Path>,
    x: &Tensor,
    labels: &[u8],
    kinds: &[AnomalyKind],
    spec: &AttackSpec,
) -> Result<()> {
    Model::check_input(x.shape())?;
    let n = x.shape()[0];
    if labels.len() != n || kinds.len() != n {
        return Err(Error::invalid(
            "adversarial dump: rows, labels and kinds differ in length",
        ));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..HOURS).map(|i| format!("v{i}")).collect();
    header.extend(["label", "kind", "attack_family", "epsilon"].map(String::from));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec: Vec<String> = x.row(i).iter().map(|&v| numfmt::sig12(v)).collect();
        rec.push(labels[i].to_string());
        rec.push(kinds[i].name().to_string());
        rec.push(spec.family.name().to_string());
        rec.push(numfmt::sig12(spec.epsilon));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
