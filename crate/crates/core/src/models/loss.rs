//! Binary focal loss.
//!
//! `J = mean_i[ -a_i (1 - q_i)^gamma ln q_i ]` with `q_i = p_i` and
//! `a_i = alpha` for positives, `q_i = 1 - p_i` and `a_i = 1 - alpha` for
//! negatives. Probabilities are clamped `1e-12` away from 0 and 1.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalLoss {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLoss {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

fn check_inputs(p: &[f64], y: &[u8]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::Shape {
            op: "focal_loss",
            lhs: vec![p.len()],
            rhs: vec![y.len()],
        });
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::invalid(format!("focal_loss: probability {bad} outside [0, 1]")));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("focal_loss: labels must be 0 or 1"));
    }
    Ok(())
}

impl FocalLoss {
    /// Records the loss of probabilities `p` (`[B]`) against `y` on `tape`.
    pub fn graph(&self, tape: &mut Tape, p: Var, y: &[u8]) -> Result<Var> {
        check_inputs(tape.value(p).data(), y)?;
        let n = y.len();
        let yv: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
        let sign: Vec<f64> = yv.iter().map(|l| 2.0 * l - 1.0).collect();
        let weight: Vec<f64> = yv
            .iter()
            .map(|l| -(l * self.alpha + (1.0 - l) * (1.0 - self.alpha)))
            .collect();
        let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        // q = y ? p : 1 - p  ==  (2y-1)·p + (1-y)
        let sign = tape.constant(Tensor::vector(sign));
        let off = tape.constant(Tensor::vector(yv.iter().map(|l| 1.0 - l).collect()));
        let sp = tape.mul(pc, sign)?;
        let q = tape.add(sp, off)?;
        let one_minus = tape.scale(q, -1.0)?;
        let one_minus = tape.offset(one_minus, 1.0)?;
        let modulating = tape.powf(one_minus, self.gamma)?;
        let logq = tape.log(q)?;
        let prod = tape.mul(modulating, logq)?;
        let w = tape.constant(Tensor::vector(weight));
        let per_sample = tape.mul(prod, w)?;
        debug_assert_eq!(tape.value(per_sample).len(), n);
        tape.mean(per_sample)
    }

    /// Same quantity evaluated directly.
    pub fn value(&self, p: &[f64], y: &[u8]) -> Result<f64> {
        check_inputs(p, y)?;
        if p.is_empty() {
            return Err(Error::invalid("focal_loss of an empty batch"));
        }
        let total: f64 = p
            .iter()
            .zip(y)
            .map(|(&p, &l)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let (q, a) = if l == 1 {
                    (p, self.alpha)
                } else {
                    (1.0 - p, 1.0 - self.alpha)
                };
                -a * (1.0 - q).powf(self.gamma) * q.ln()
            })
            .sum();
        Ok(total / p.len() as f64)
    }
}
