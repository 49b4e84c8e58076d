//! Single-layer LSTM over the 24 hourly readings, final hidden state into a
//! sigmoid unit.

use serde::{Deserialize, Serialize};

use super::init::glorot;
use super::weights::{BoundWeights, WeightMap};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self { hidden: 100 }
    }
}

pub(crate) const KERNEL: &str = "lstm.kernel";
pub(crate) const RECURRENT: &str = "lstm.recurrent";
pub(crate) const BIAS: &str = "lstm.bias";
pub(crate) const OUT_KERNEL: &str = "out.kernel";
pub(crate) const OUT_BIAS: &str = "out.bias";

/// Gates are packed `[input, forget, cell, output]` along the last axis.
pub(crate) fn init(cfg: &LstmConfig, seed: u64) -> WeightMap {
    let h = cfg.hidden;
    let mut rng = seed::rng(seed);
    let mut w = WeightMap::new();
    w.insert(KERNEL, glorot(&mut rng, 1, 4 * h));
    w.insert(RECURRENT, glorot(&mut rng, h, 4 * h));
    let mut bias = vec![0.0; 4 * h];
    bias[h..2 * h].fill(1.0);
    w.insert(BIAS, Tensor::vector(bias));
    w.insert(OUT_KERNEL, glorot(&mut rng, h, 1));
    w.insert(OUT_BIAS, Tensor::vector(vec![0.0]));
    w
}

/// `x` is `[B, T]`; returns the output logits `[B, 1]`.
pub(crate) fn logits(cfg: &LstmConfig, tape: &mut Tape, w: &BoundWeights, x: Var) -> Result<Var> {
    let h = cfg.hidden;
    let (batch, steps) = (tape.shape(x)[0], tape.shape(x)[1]);
    let mut hidden: Option<Var> = None;
    let mut cell: Option<Var> = None;
    for t in 0..steps {
        let xt = tape.slice(x, 1, t, 1)?;
        let mut gates = tape.matmul(xt, w[KERNEL])?;
        if let Some(hp) = hidden {
            let rec = tape.matmul(hp, w[RECURRENT])?;
            gates = tape.add(gates, rec)?;
        }
        gates = tape.add(gates, w[BIAS])?;
        let i_raw = tape.slice(gates, 1, 0, h)?;
        let f_raw = tape.slice(gates, 1, h, h)?;
        let g_raw = tape.slice(gates, 1, 2 * h, h)?;
        let o_raw = tape.slice(gates, 1, 3 * h, h)?;
        let i = tape.sigmoid(i_raw)?;
        let g = tape.tanh(g_raw)?;
        let o = tape.sigmoid(o_raw)?;
        let ig = tape.mul(i, g)?;
        let c = match cell {
            Some(cp) => {
                let f = tape.sigmoid(f_raw)?;
                let fc = tape.mul(f, cp)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        hidden = Some(tape.mul(o, tc)?);
        cell = Some(c);
    }
    let last = match hidden {
        Some(hv) => hv,
        None => tape.constant(Tensor::zeros(&[batch, h])),
    };
    let z = tape.matmul(last, w[OUT_KERNEL])?;
    tape.add(z, w[OUT_BIAS])
}

/// Hidden and cell states after every step, for inspection.
pub fn trace_states(cfg: &LstmConfig, weights: &WeightMap, x: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
    let h = cfg.hidden;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let batch = x.shape()[0];
    let mut hidden = tape.constant(Tensor::zeros(&[batch, h]));
    let mut cell = tape.constant(Tensor::zeros(&[batch, h]));
    let mut out = Vec::new();
    for t in 0..x.shape()[1] {
        let xt = tape.slice(xv, 1, t, 1)?;
        let a = tape.matmul(xt, w[KERNEL])?;
        let b = tape.matmul(hidden, w[RECURRENT])?;
        let s = tape.add(a, b)?;
        let gates = tape.add(s, w[BIAS])?;
        let mut gate = |k: usize, sig: bool| -> Result<Var> {
            let raw = tape.slice(gates, 1, k * h, h)?;
            if sig {
                tape.sigmoid(raw)
            } else {
                tape.tanh(raw)
            }
        };
        let (i, f, g, o) = (gate(0, true)?, gate(1, true)?, gate(2, false)?, gate(3, true)?);
        let fc = tape.mul(f, cell)?;
        let ig = tape.mul(i, g)?;
        cell = tape.add(fc, ig)?;
        let tc = tape.tanh(cell)?;
        hidden = tape.mul(o, tc)?;
        out.push((tape.value(hidden).clone(), tape.value(cell).clone()));
    }
    Ok(out)
}
