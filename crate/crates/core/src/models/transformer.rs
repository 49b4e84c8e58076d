//! Encoder-only transformer classifier.
//!
//! Scalar readings are embedded linearly to `d_model`, scaled by
//! `sqrt(d_model)` so the reading is not drowned by the unit-amplitude
//! sinusoidal position code, and summed with that code. Each block is post-norm: self-attention, residual,
//! layer norm, ReLU feed-forward, residual, layer norm. The sequence is then
//! averaged over time and fed through a ReLU dense layer and a sigmoid unit.

use serde::{Deserialize, Serialize};

use super::init::glorot;
use super::weights::{BoundWeights, WeightMap};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub blocks: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ff_hidden: usize,
    pub dense: usize,
    pub seq_len: usize,
    pub ln_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            blocks: 5,
            heads: 8,
            d_model: 160,
            ff_hidden: 128,
            dense: 256,
            seq_len: 24,
            ln_eps: 1e-6,
        }
    }
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

fn dense(w: &mut WeightMap, rng: &mut rand_chacha::ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    w.insert(format!("{name}.kernel"), glorot(rng, fan_in, fan_out));
    w.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

pub(crate) fn init(cfg: &TransformerConfig, seed: u64) -> WeightMap {
    let d = cfg.d_model;
    let mut rng = seed::rng(seed);
    let mut w = WeightMap::new();
    dense(&mut w, &mut rng, "embed", 1, d);
    for b in 0..cfg.blocks {
        for p in ["q", "k", "v", "o"] {
            dense(&mut w, &mut rng, &format!("block{b}.attn.{p}"), d, d);
        }
        dense(&mut w, &mut rng, &format!("block{b}.ffn.in"), d, cfg.ff_hidden);
        dense(&mut w, &mut rng, &format!("block{b}.ffn.out"), cfg.ff_hidden, d);
        for ln in ["ln1", "ln2"] {
            w.insert(format!("block{b}.{ln}.gamma"), Tensor::full(&[d], 1.0));
            w.insert(format!("block{b}.{ln}.beta"), Tensor::zeros(&[d]));
        }
    }
    dense(&mut w, &mut rng, "head.hidden", d, cfg.dense);
    dense(&mut w, &mut rng, "head.out", cfg.dense, 1);
    w
}

/// Fixed sinusoidal position code `[seq_len, d_model]`.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d_model as f64);
            data[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![seq_len, d_model], data).expect("pe shape")
}

fn linear(tape: &mut Tape, w: &BoundWeights, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, w[format!("{name}.kernel").as_str()])?;
    tape.add(y, w[format!("{name}.bias").as_str()])
}

fn norm(tape: &mut Tape, w: &BoundWeights, name: &str, x: Var, eps: f64) -> Result<Var> {
    let n = tape.layer_norm(x, eps)?;
    let g = tape.mul(n, w[format!("{name}.gamma").as_str()])?;
    tape.add(g, w[format!("{name}.beta").as_str()])
}

/// `[B*T, D]` to `[B*H, T, dh]`.
fn split_heads(tape: &mut Tape, x: Var, batch: usize, cfg: &TransformerConfig) -> Result<Var> {
    let (t, h, dh) = (cfg.seq_len, cfg.heads, cfg.head_dim());
    let r = tape.reshape(x, &[batch, t, h, dh])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[batch * h, t, dh])
}

fn merge_heads(tape: &mut Tape, x: Var, batch: usize, cfg: &TransformerConfig) -> Result<Var> {
    let (t, h, dh) = (cfg.seq_len, cfg.heads, cfg.head_dim());
    let r = tape.reshape(x, &[batch, h, t, dh])?;
    let p = tape.permute(r, &[0, 2, 1, 3])?;
    tape.reshape(p, &[batch * t, cfg.d_model])
}

/// `x` is `[B, T]`; returns logits `[B, 1]`. When `attention` is given, the
/// softmax weights of every block (`[B*H, T, T]`) are pushed onto it.
pub(crate) fn logits(
    cfg: &TransformerConfig,
    tape: &mut Tape,
    w: &BoundWeights,
    x: Var,
    mut attention: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let (batch, t, d) = (tape.shape(x)[0], cfg.seq_len, cfg.d_model);
    let col = tape.reshape(x, &[batch * t, 1])?;
    let emb = linear(tape, w, "embed", col)?;
    let emb = tape.reshape(emb, &[batch, t, d])?;
    let emb = tape.scale(emb, (d as f64).sqrt())?;
    let pe = tape.constant(positional_encoding(t, d));
    let emb = tape.add(emb, pe)?;
    let mut h = tape.reshape(emb, &[batch * t, d])?;
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    for b in 0..cfg.blocks {
        let q = linear(tape, w, &format!("block{b}.attn.q"), h)?;
        let k = linear(tape, w, &format!("block{b}.attn.k"), h)?;
        let v = linear(tape, w, &format!("block{b}.attn.v"), h)?;
        let q = split_heads(tape, q, batch, cfg)?;
        let k = split_heads(tape, k, batch, cfg)?;
        let v = split_heads(tape, v, batch, cfg)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores)?;
        if let Some(list) = attention.as_deref_mut() {
            list.push(attn);
        }
        let ctx = tape.matmul(attn, v)?;
        let ctx = merge_heads(tape, ctx, batch, cfg)?;
        let attn_out = linear(tape, w, &format!("block{b}.attn.o"), ctx)?;
        let res = tape.add(h, attn_out)?;
        let h1 = norm(tape, w, &format!("block{b}.ln1"), res, cfg.ln_eps)?;
        let ff = linear(tape, w, &format!("block{b}.ffn.in"), h1)?;
        let ff = tape.relu(ff)?;
        let ff = linear(tape, w, &format!("block{b}.ffn.out"), ff)?;
        let res2 = tape.add(h1, ff)?;
        h = norm(tape, w, &format!("block{b}.ln2"), res2, cfg.ln_eps)?;
    }
    let seq = tape.reshape(h, &[batch, t, d])?;
    let pooled = tape.mean_axis(seq, 1)?;
    let hidden = linear(tape, w, "head.hidden", pooled)?;
    let hidden = tape.relu(hidden)?;
    linear(tape, w, "head.out", hidden)
}
