//! Reverse-mode differentiation over a linear record of executed operations.
//!
//! Every operation appends a node holding its output value. Nodes only ever
//! reference earlier nodes, so the record is topologically ordered by
//! construction and the backward sweep is a single reverse walk.
//!
//! A tape is single-use: [`Tape::backward`] consumes it and afterwards only
//! the gradients of `requires_grad` leaves remain readable.

use super::kernels::{gemm, inverse_permutation, permute, split_axis};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is laid over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    /// rhs shape equals the trailing dims of lhs; rhs repeats every `period` elements
    Trailing {
        period: usize,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Offset(Var),
    MatMul {
        lhs: Var,
        rhs: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Pow(Var, f64),
    Softmax(Var),
    ReduceAxis {
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
        mean: bool,
    },
    SumAll(Var),
    MeanAll(Var),
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        input: Var,
        outer: usize,
        src_width: usize,
        offset: usize,
        width: usize,
    },
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    Reshape(Var),
    LayerNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Clamp {
        input: Var,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are kept after backward only for leaves
    /// registered with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a `requires_grad` leaf, available once backward ran.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = self.nodes.get(v.0)?;
        let g = node.grad.as_ref()?;
        Tensor::new(node.value.shape().to_vec(), g.clone()).ok()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn bcast(&self, op: &'static str, lhs: Var, rhs: Var) -> Result<Bcast> {
        let ls = self.shape(lhs);
        let rs = self.shape(rhs);
        if ls == rs {
            return Ok(Bcast::Same);
        }
        if self.value(rhs).len() == 1 {
            return Ok(Bcast::Scalar);
        }
        if rs.len() < ls.len() && ls.ends_with(rs) {
            return Ok(Bcast::Trailing {
                period: self.value(rhs).len(),
            });
        }
        Err(Error::Shape {
            op,
            lhs: ls.to_vec(),
            rhs: rs.to_vec(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        lhs: Var,
        rhs: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var> {
        let bc = self.bcast(name, lhs, rhs)?;
        let a = self.value(lhs);
        let b = self.value(rhs).data();
        let data: Vec<f64> = match bc {
            Bcast::Same => a.data().iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => a.data().iter().map(|&x| f(x, b[0])).collect(),
            Bcast::Trailing { period } => {
                let mut out = Vec::with_capacity(a.len());
                for row in a.data().chunks_exact(period) {
                    out.extend(row.iter().zip(b).map(|(&x, &y)| f(x, y)));
                }
                out
            }
        };
        let value = Tensor::new(a.shape().to_vec(), data)?;
        self.push(name, value, make(lhs, rhs, bc), &[lhs, rhs])
    }

    /// `lhs + rhs`; `rhs` may be a scalar or match the trailing dims of `lhs`.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("add", lhs, rhs, |a, b| a + b, Op::Add)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("sub", lhs, rhs, |a, b| a - b, Op::Sub)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary("mul", lhs, rhs, |a, b| a * b, Op::Mul)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push("scale", value, Op::Scale(input, factor), &[input])
    }

    /// `input + c` for a constant `c`.
    pub fn offset(&mut self, input: Var, c: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v + c);
        self.push("offset", value, Op::Offset(input), &[input])
    }

    /// Matrix product of `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs).to_vec();
        let err = || Error::Shape {
            op: "matmul",
            lhs: ls.clone(),
            rhs: rs.clone(),
        };
        let (batch, m, k, n, out_shape) = match (ls.as_slice(), rs.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => (1, m, k, n, vec![m, n]),
            (&[b, m, k], &[b2, k2, n]) if k == k2 && b == b2 => (b, m, k, n, vec![b, m, n]),
            _ => return Err(err()),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let a = self.value(lhs).data();
            let b = self.value(rhs).data();
            for g in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a[g * m * k..(g + 1) * m * k],
                    false,
                    &b[g * k * n..(g + 1) * k * n],
                    false,
                    &mut out[g * m * n..(g + 1) * m * n],
                    false,
                );
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(
            "matmul",
            value,
            Op::MatMul {
                lhs,
                rhs,
                batch,
                m,
                k,
                n,
            },
            &[lhs, rhs],
        )
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(input), &[input])
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(input), &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(input), &[input])
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(f64::exp);
        self.push("exp", value, Op::Exp(input), &[input])
    }

    pub fn log(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(f64::ln);
        self.push("log", value, Op::Log(input), &[input])
    }

    pub fn powf(&mut self, input: Var, exponent: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v.powf(exponent));
        self.push("pow", value, Op::Pow(input, exponent), &[input])
    }

    pub fn clamp(&mut self, input: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v.clamp(lo, hi));
        self.push("clamp", value, Op::Clamp { input, lo, hi }, &[input])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let w = *t.shape().last().ok_or_else(|| Error::invalid("softmax of a scalar"))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(w.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax", value, Op::Softmax(input), &[input])
    }

    fn reduce_axis(&mut self, input: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape {
                op: name,
                lhs: shape,
                rhs: vec![axis],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(input).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        self.push(
            name,
            value,
            Op::ReduceAxis {
                input,
                outer,
                len,
                inner,
                mean,
            },
            &[input],
        )
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(input, axis, true)
    }

    pub fn sum_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(input, axis, false)
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::MeanAll(input), &[input])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                lhs: base,
                rhs: vec![axis],
            });
        }
        let mut widths = Vec::with_capacity(inputs.len());
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            let (_, len, inner) = split_axis(s, axis);
            widths.push(len * inner);
            axis_total += len;
        }
        let (outer, _, _) = split_axis(&base, axis);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let value = Tensor::new(shape, out)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                widths,
            },
            inputs,
        )
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: shape,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        let src_width = axis_len * inner;
        let width = len * inner;
        let offset = start * inner;
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let b = o * src_width + offset;
            out.extend_from_slice(&src[b..b + width]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        self.push(
            "slice",
            value,
            Op::Slice {
                input,
                outer,
                src_width,
                offset,
                width,
            },
            &[input],
        )
    }

    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm
                .iter()
                .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::Shape {
                op: "permute",
                lhs: shape,
                rhs: perm.to_vec(),
            });
        }
        let data = permute(self.value(input).data(), &shape, perm);
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "permute",
            value,
            Op::Permute {
                input,
                perm: perm.to_vec(),
            },
            &[input],
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let nd = self.shape(input).len();
        if nd < 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: self.shape(input).to_vec(),
                rhs: vec![],
            });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(input, &perm)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(input), &[input])
    }

    /// Normalizes each row over the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let t = self.value(input);
        let w = *t
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm of a scalar"))?;
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / w.max(1));
        for row in out.chunks_mut(w.max(1)) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push("layer_norm", value, Op::LayerNorm { input, inv_std }, &[input])
    }

    /// Runs the backward sweep from a scalar `loss`.
    ///
    /// Afterwards every leaf recorded with `requires_grad` holds its gradient
    /// (zeros when it did not influence the loss). The tape can only be swept
    /// once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed".into()));
        }
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Backward("loss is not on this tape".into()))?;
        if node.value.len() != 1 || node.value.ndim() > 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        self.consumed = true;
        if !node.requires_grad {
            self.zero_leaf_grads();
            return Ok(());
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].requires_grad {
                    self.nodes[i].grad = Some(g);
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.zero_leaf_grads();
        // intermediate values are no longer needed
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.value = Tensor::zeros(&[0]);
            }
        }
        Ok(())
    }

    fn zero_leaf_grads(&mut self) {
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b, bc) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| reduce_into(gb, g, *bc, 1.0));
            }
            Op::Sub(a, b, bc) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| reduce_into(gb, g, *bc, -1.0));
            }
            Op::Mul(a, b, bc) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                self.accumulate(grads, *a, |ga| match bc {
                    Bcast::Same => ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(d, (x, y))| *d += x * y),
                    Bcast::Scalar => ga.iter_mut().zip(g).for_each(|(d, x)| *d += x * bv[0]),
                    Bcast::Trailing { period } => {
                        for (dr, gr) in ga.chunks_exact_mut(*period).zip(g.chunks_exact(*period)) {
                            dr.iter_mut().zip(gr.iter().zip(bv)).for_each(|(d, (x, y))| *d += x * y);
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| match bc {
                    Bcast::Same => gb.iter_mut().zip(g.iter().zip(av)).for_each(|(d, (x, y))| *d += x * y),
                    Bcast::Scalar => gb[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>(),
                    Bcast::Trailing { period } => {
                        for (gr, ar) in g.chunks_exact(*period).zip(av.chunks_exact(*period)) {
                            gb.iter_mut().zip(gr.iter().zip(ar)).for_each(|(d, (x, y))| *d += x * y);
                        }
                    }
                });
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(d, x)| *d += x * f)),
            Op::Offset(a) | Op::Reshape(a) => self.accumulate(grads, *a, |ga| add_into(ga, g)),
            Op::MatMul {
                lhs,
                rhs,
                batch,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.nodes[lhs.0].value.data();
                let bv = self.nodes[rhs.0].value.data();
                self.accumulate(grads, *lhs, |ga| {
                    for b in 0..*batch {
                        // dA = dC · Bᵀ
                        gemm(
                            m,
                            n,
                            k,
                            &g[b * m * n..(b + 1) * m * n],
                            false,
                            &bv[b * k * n..(b + 1) * k * n],
                            true,
                            &mut ga[b * m * k..(b + 1) * m * k],
                            true,
                        );
                    }
                });
                self.accumulate(grads, *rhs, |gb| {
                    for b in 0..*batch {
                        // dB = Aᵀ · dC
                        gemm(
                            k,
                            m,
                            n,
                            &av[b * m * k..(b + 1) * m * k],
                            true,
                            &g[b * m * n..(b + 1) * m * n],
                            false,
                            &mut gb[b * k * n..(b + 1) * k * n],
                            true,
                        );
                    }
                });
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, |ga| {
                for ((d, x), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += x * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |ga| {
                for ((d, x), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += x * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(av) {
                        if *v > 0.0 {
                            *d += x;
                        }
                    }
                })
            }
            Op::Exp(a) => self.accumulate(grads, *a, |ga| {
                for ((d, x), y) in ga.iter_mut().zip(g).zip(out) {
                    *d += x * y;
                }
            }),
            Op::Log(a) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(av) {
                        *d += x / v;
                    }
                })
            }
            Op::Pow(a, p) => {
                let av = self.nodes[a.0].value.data();
                self.accumulate(grads, *a, |ga| {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(av) {
                        *d += x * p * v.powf(p - 1.0);
                    }
                })
            }
            Op::Clamp { input, lo, hi } => {
                let av = self.nodes[input.0].value.data();
                self.accumulate(grads, *input, |ga| {
                    for ((d, x), v) in ga.iter_mut().zip(g).zip(av) {
                        if *v >= *lo && *v <= *hi {
                            *d += x;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let w = *self.nodes[i].value.shape().last().unwrap_or(&1);
                self.accumulate(grads, *a, |ga| {
                    for ((dr, gr), yr) in ga.chunks_mut(w).zip(g.chunks(w)).zip(out.chunks(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (x - dot);
                        }
                    }
                })
            }
            Op::ReduceAxis {
                input,
                outer,
                len,
                inner,
                mean,
            } => {
                let scale = if *mean { 1.0 / *len as f64 } else { 1.0 };
                self.accumulate(grads, *input, |ga| {
                    for o in 0..*outer {
                        for a in 0..*len {
                            let base = (o * len + a) * inner;
                            for j in 0..*inner {
                                ga[base + j] += g[o * inner + j] * scale;
                            }
                        }
                    }
                })
            }
            Op::SumAll(a) => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAll(a) => {
                let s = g[0] / self.nodes[a.0].value.len() as f64;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += s))
            }
            Op::Concat { inputs, outer, widths } => {
                let total: usize = widths.iter().sum();
                let mut start = 0;
                for (v, &w) in inputs.iter().zip(widths) {
                    self.accumulate(grads, *v, |gv| {
                        for o in 0..*outer {
                            let src = &g[o * total + start..o * total + start + w];
                            add_into(&mut gv[o * w..(o + 1) * w], src);
                        }
                    });
                    start += w;
                }
            }
            Op::Slice {
                input,
                outer,
                src_width,
                offset,
                width,
            } => self.accumulate(grads, *input, |ga| {
                for o in 0..*outer {
                    let b = o * src_width + offset;
                    add_into(&mut ga[b..b + width], &g[o * width..(o + 1) * width]);
                }
            }),
            Op::Permute { input, perm } => {
                let out_shape = self.nodes[i].value.shape();
                let back = permute(g, out_shape, &inverse_permutation(perm));
                self.accumulate(grads, *input, |ga| add_into(ga, &back));
            }
            Op::LayerNorm { input, inv_std } => {
                let w = *self.nodes[i].value.shape().last().unwrap_or(&1);
                self.accumulate(grads, *input, |ga| {
                    let rows = ga.chunks_mut(w).zip(g.chunks(w)).zip(out.chunks(w));
                    for (((dr, gr), yr), s) in rows.zip(inv_std) {
                        let mg = gr.iter().sum::<f64>() / w as f64;
                        let mgy = gr.iter().zip(yr).map(|(x, y)| x * y).sum::<f64>() / w as f64;
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += s * (x - mg - y * mgy);
                        }
                    }
                })
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(slot);
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn reduce_into(dst: &mut [f64], g: &[f64], bc: Bcast, sign: f64) {
    match bc {
        Bcast::Same => dst.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x),
        Bcast::Scalar => dst[0] += sign * g.iter().sum::<f64>(),
        Bcast::Trailing { period } => {
            for row in g.chunks_exact(period) {
                dst.iter_mut().zip(row).for_each(|(d, x)| *d += sign * x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_and_softmax_reference_points() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let a = tape.constant(Tensor::vector(vec![2.5, 2.5, 2.5]));
        let p = tape.softmax(a).unwrap();
        for &v in tape.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[2]));
        let err = tape.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_of_zero_weight_dot() {
        let x = [0.3, -1.2, 2.0];
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[1, 3], &[0.0; 3]), true);
        let xv = tape.constant(t(&[3, 1], &x));
        let z = tape.matmul(w, xv).unwrap();
        let s = tape.sigmoid(z).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        for (gi, xi) in g.data().iter().zip(x) {
            assert!((gi - 0.25 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let y = tape.scale(x, 2.0).unwrap();
        assert!(tape.backward(y).is_err(), "non-scalar loss");
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::Backward(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0]), true);
        let unused = tape.leaf(Tensor::vector(vec![5.0, 6.0]), true);
        let l = tape.sum(x).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0]));
        assert!(matches!(tape.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn bias_broadcast_over_trailing_dims() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]), true);
        let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]), true);
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let l = tape.sum(y).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
