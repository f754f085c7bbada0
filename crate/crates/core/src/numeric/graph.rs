//! Define-by-run computation graph with reverse-mode accumulation.
//!
//! Nodes are appended in evaluation order, so walking the node list backwards
//! is a valid reverse topological order. Each node owns its value as a
//! [`DiffArray`]; gradients are accumulated into that array by
//! [`Graph::backward`].

use rand::Rng;

use super::array::DiffArray;
use super::gemm::{gemm, MatRef};
use super::kernels::{conv3d_backward_raw, conv3d_raw, max_pool3d_raw, ConvGeometry, KERNEL};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Per-channel running mean and variance of a batch-norm layer. Empty until
/// the first training-mode pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn is_populated(&self) -> bool {
        !self.mean.is_empty()
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        if !self.is_populated() {
            self.mean = mean.to_vec();
            self.var = var.to_vec();
            return;
        }
        for (r, m) in self.mean.iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.var.iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    BatchedMatMul { a: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Elu(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, index: Vec<usize> },
    Conv3d { x: Var, k: Var, b: Var, geo: ConvGeometry },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f64>, labels: Vec<usize> },
}

struct Node {
    value: DiffArray,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, Var)>,
}

fn dim_err(msg: String) -> Error {
    Error::Dimension(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the branch taken by every non-smooth op: ReLU input signs and
    /// max-pool winners. Two evaluations with equal signatures lie on the
    /// same smooth piece, which finite-difference probes rely on.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for chunk in self.data(*x).chunks(64) {
                        let bits = chunk.iter().fold(0u64, |acc, v| acc << 1 | u64::from(*v > 0.0));
                        h.write_u64(bits);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: DiffArray, op: Op, tracked: bool) -> Var {
        let value = if tracked { value.mark_tracked() } else { value };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    pub fn value(&self, v: Var) -> &DiffArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Untracked input.
    pub fn constant(&mut self, value: DiffArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf.
    pub fn variable(&mut self, value: DiffArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Tracked leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.variable(store.value(id).clone());
        self.bindings.push((id, v));
        v
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(dim_err(format!(
                "dense expects input [B, C_in], weights [C_in, C_out], bias [C_out]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if xs[1] != ws[0] {
            return Err(dim_err(format!(
                "dense input axis 1 ({}) differs from weights axis 0 ({})",
                xs[1], ws[0]
            )));
        }
        if ws[1] != bs[0] {
            return Err(dim_err(format!(
                "dense weights axis 1 ({}) differs from bias axis 0 ({})",
                ws[1], bs[0]
            )));
        }
        let (rows, c_in, c_out) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(rows * c_out);
        for _ in 0..rows {
            out.extend_from_slice(self.data(b));
        }
        gemm(
            1.0,
            MatRef::new(self.data(x), rows, c_in),
            MatRef::new(self.data(w), c_in, c_out),
            1.0,
            &mut out,
        );
        let t = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(DiffArray::new([rows, c_out], out)?, Op::Dense { x, w, b }, t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(dim_err(format!("matmul of {as_:?} and {bs:?}")));
        }
        let (m, k, n) = (as_[0], as_[1], bs[1]);
        let mut out = vec![0.0; m * n];
        gemm(1.0, MatRef::new(self.data(a), m, k), MatRef::new(self.data(b), k, n), 0.0, &mut out);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(DiffArray::new([m, n], out)?, Op::MatMul { a, b }, t))
    }

    /// `[G, M, K] × [G, K, N] → [G, M, N]`.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] || as_[2] != bs[1] {
            return Err(dim_err(format!("batched matmul of {as_:?} and {bs:?}")));
        }
        let (g, m, k, n) = (as_[0], as_[1], as_[2], bs[2]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; g * m * n];
        for gi in 0..g {
            let ag = &ad[gi * m * k..(gi + 1) * m * k];
            let bg = &bd[gi * k * n..(gi + 1) * k * n];
            let og = &mut out[gi * m * n..(gi + 1) * m * n];
            small_matmul(ag, bg, og, m, k, n);
        }
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(DiffArray::new([g, m, n], out)?, Op::BatchedMatMul { a, b }, t))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(DiffArray::new(shape, out)?, Op::Add(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(DiffArray::new(shape, out)?, Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let t = self.tracked(a);
        self.push(DiffArray::new(shape, out).expect("same size"), Op::Scale(a, c), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        let t = self.tracked(a);
        self.push(DiffArray::scalar(s), Op::Sum(a), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let t = self.tracked(a);
        self.push(DiffArray::new(shape, out).expect("same size"), Op::Relu(a), t)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
            .collect();
        let shape = self.shape(a).to_vec();
        let t = self.tracked(a);
        self.push(DiffArray::new(shape, out).expect("same size"), Op::Elu(a), t)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = DiffArray::new(self.shape(a).to_vec(), self.data(a).to_vec())?.reshaped(shape)?;
        let t = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), t))
    }

    /// Concatenates `[R, C_i]` matrices along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero arrays".into()))?;
        let rows = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(dim_err(format!(
                    "concat expects [{rows}, C] matrices, got {s:?}"
                )));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(DiffArray::new([rows, total], out)?, Op::ConcatCols(parts.to_vec()), t))
    }

    /// Selects rows of an `[N, C]` matrix; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(dim_err(format!("gather expects [N, C], got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Input(format!("gather index {bad} out of range for {n} rows")));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let t = self.tracked(x);
        Ok(self.push(DiffArray::new([index.len(), c], out)?, Op::GatherRows { x, index }, t))
    }

    /// Stride-1 3-D cross-correlation with kernel 3 and symmetric zero
    /// padding `pad` (0 for a valid convolution).
    pub fn conv3d(&mut self, x: Var, k: Var, b: Var, pad: usize) -> Result<Var> {
        let (xs, ks, bs) = (self.shape(x), self.shape(k), self.shape(b));
        if xs.len() != 5 {
            return Err(dim_err(format!("conv3d input must be [B, C, X, Y, Z], got {xs:?}")));
        }
        if ks.len() != 5 || ks[2..] != [KERNEL; 3] {
            return Err(dim_err(format!("conv3d kernel must be [C_out, C_in, 3, 3, 3], got {ks:?}")));
        }
        if ks[1] != xs[1] {
            return Err(dim_err(format!(
                "conv3d kernel axis 1 ({}) differs from input channel axis 1 ({})",
                ks[1], xs[1]
            )));
        }
        if bs != [ks[0]] {
            return Err(dim_err(format!("conv3d bias must be [{}], got {bs:?}", ks[0])));
        }
        for (axis, &d) in xs[2..].iter().enumerate() {
            if d + 2 * pad < KERNEL {
                return Err(dim_err(format!(
                    "conv3d spatial axis {} has extent {d} (< 3 after padding {pad})",
                    axis + 2
                )));
            }
        }
        let geo = ConvGeometry {
            batch: xs[0],
            c_in: xs[1],
            c_out: ks[0],
            input: [xs[2], xs[3], xs[4]],
            pad,
        };
        let out = conv3d_raw(&geo, self.data(x), self.data(k), self.data(b));
        let [ox, oy, oz] = geo.output();
        let t = self.tracked(x) || self.tracked(k) || self.tracked(b);
        Ok(self.push(
            DiffArray::new([geo.batch, geo.c_out, ox, oy, oz], out)?,
            Op::Conv3d { x, k, b, geo },
            t,
        ))
    }

    /// Batch normalization over every axis except axis 1 (channels).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        stats: &mut RunningStats,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || xs[0] == 0 {
            return Err(dim_err(format!("batch norm input must be [B >= 1, C, ...], got {xs:?}")));
        }
        let (batch, c) = (xs[0], xs[1]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err(format!(
                "batch norm gamma/beta must be [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let spatial: usize = xs[2..].iter().product();
        let count = (batch * spatial) as f64;
        let d = self.data(x);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for bi in 0..batch {
                    for (ci, m) in mean.iter_mut().enumerate() {
                        let base = (bi * c + ci) * spatial;
                        *m += d[base..base + spatial].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for bi in 0..batch {
                    for ci in 0..c {
                        let base = (bi * c + ci) * spatial;
                        var[ci] += d[base..base + spatial]
                            .iter()
                            .map(|v| (v - mean[ci]) * (v - mean[ci]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                stats.update(&mean, &var);
                (mean, var)
            }
            Mode::Eval => {
                if !stats.is_populated() {
                    return Err(Error::State(
                        "batch norm in eval mode before running statistics were populated".into(),
                    ));
                }
                if stats.mean.len() != c {
                    return Err(dim_err(format!(
                        "running statistics hold {} channels, input has {c}",
                        stats.mean.len()
                    )));
                }
                (stats.mean.clone(), stats.var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let (g, be) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; d.len()];
        let mut out = vec![0.0; d.len()];
        for bi in 0..batch {
            for ci in 0..c {
                let base = (bi * c + ci) * spatial;
                for s in base..base + spatial {
                    let h = (d[s] - mean[ci]) * inv_std[ci];
                    xhat[s] = h;
                    out[s] = g[ci] * h + be[ci];
                }
            }
        }
        let t = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        Ok(self.push(
            DiffArray::new(xs, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            t,
        ))
    }

    /// Max pooling with window 2 and stride 2 over the three spatial axes;
    /// odd trailing extents are truncated.
    pub fn max_pool3d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 5 {
            return Err(dim_err(format!("max pool input must be [B, C, X, Y, Z], got {xs:?}")));
        }
        for (axis, &d) in xs[2..].iter().enumerate() {
            if d < 2 {
                return Err(dim_err(format!(
                    "max pool spatial axis {} has extent {d} (< window 2)",
                    axis + 2
                )));
            }
        }
        let shape = [xs[0], xs[1], xs[2], xs[3], xs[4]];
        let (out, argmax) = max_pool3d_raw(self.data(x), shape);
        let out_shape = [shape[0], shape[1], shape[2] / 2, shape[3] / 2, shape[4] / 2];
        let t = self.tracked(x);
        Ok(self.push(DiffArray::new(out_shape, out)?, Op::MaxPool { x, argmax }, t))
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let t = self.tracked(x);
        Ok(self.push(DiffArray::new(shape, out)?, Op::Dropout { x, mask }, t))
    }

    /// Row-wise softmax of a `[B, C]` matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(dim_err(format!("softmax expects [B, C], got {xs:?}")));
        }
        let (rows, c) = (xs[0], xs[1]);
        let out = softmax_rows(self.data(x), rows, c);
        let t = self.tracked(x);
        Ok(self.push(DiffArray::new([rows, c], out)?, Op::Softmax(x), t))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 2 {
            return Err(dim_err(format!("logits must be [B, C], got {ls:?}")));
        }
        let (rows, c) = (ls[0], ls[1]);
        if labels.len() != rows {
            return Err(dim_err(format!("{} labels for {rows} logit rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Input(format!("label {bad} outside class range 0..{c}")));
        }
        if rows == 0 {
            return Err(Error::Input("cross-entropy over an empty batch".into()));
        }
        let d = self.data(logits);
        let probs = softmax_rows(d, rows, c);
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = &d[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= rows as f64;
        let t = self.tracked(logits);
        Ok(self.push(
            DiffArray::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            t,
        ))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Accumulates d(loss)/d(leaf) into every tracked leaf. Intermediate
    /// gradients are dropped once propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.tracked(loss) {
            return Err(Error::Usage("loss does not depend on any tracked array".into()));
        }
        let mut pending: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = pending[i].take() else { continue };
            for (parent, g) in self.local_grads(i, &gy)? {
                if !self.tracked(parent) {
                    continue;
                }
                match pending[parent.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => pending[parent.0] = Some(g),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&gy)?;
            }
        }
        Ok(())
    }

    /// Gradients of every bound parameter, summed over repeated bindings and
    /// indexed by [`ParamId`].
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; n_params];
        for &(id, v) in &self.bindings {
            if let Some(g) = self.grad(v) {
                match out[id.index()].as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    None => out[id.index()] = Some(g.to_vec()),
                }
            }
        }
        out
    }

    fn local_grads(&self, i: usize, gy: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let xs = self.shape(*x);
                let (rows, c_in, c_out) = (xs[0], xs[1], self.shape(*w)[1]);
                let dy = MatRef::new(gy, rows, c_out);
                if self.tracked(*x) {
                    let mut dx = vec![0.0; rows * c_in];
                    gemm(1.0, dy, MatRef::new(self.data(*w), c_in, c_out).t(), 0.0, &mut dx);
                    out.push((*x, dx));
                }
                if self.tracked(*w) {
                    let mut dw = vec![0.0; c_in * c_out];
                    gemm(1.0, MatRef::new(self.data(*x), rows, c_in).t(), dy, 0.0, &mut dw);
                    out.push((*w, dw));
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; c_out];
                    for row in gy.chunks(c_out) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    out.push((*b, db));
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let dy = MatRef::new(gy, m, n);
                if self.tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(1.0, dy, MatRef::new(self.data(*b), k, n).t(), 0.0, &mut da);
                    out.push((*a, da));
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(1.0, MatRef::new(self.data(*a), m, k).t(), dy, 0.0, &mut db);
                    out.push((*b, db));
                }
            }
            Op::BatchedMatMul { a, b } => {
                let s = self.shape(*a);
                let (g, m, k) = (s[0], s[1], s[2]);
                let n = self.shape(*b)[2];
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.tracked(*a) {
                    let mut da = vec![0.0; g * m * k];
                    for gi in 0..g {
                        let dyg = &gy[gi * m * n..(gi + 1) * m * n];
                        let bg = &bd[gi * k * n..(gi + 1) * k * n];
                        let dag = &mut da[gi * m * k..(gi + 1) * m * k];
                        for r in 0..m {
                            for c in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += dyg[r * n + j] * bg[c * n + j];
                                }
                                dag[r * k + c] = acc;
                            }
                        }
                    }
                    out.push((*a, da));
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; g * k * n];
                    for gi in 0..g {
                        let dyg = &gy[gi * m * n..(gi + 1) * m * n];
                        let ag = &ad[gi * m * k..(gi + 1) * m * k];
                        let dbg = &mut db[gi * k * n..(gi + 1) * k * n];
                        for r in 0..m {
                            for c in 0..k {
                                let av = ag[r * k + c];
                                let dst = &mut dbg[c * n..(c + 1) * n];
                                let src = &dyg[r * n..(r + 1) * n];
                                for j in 0..n {
                                    dst[j] += av * src[j];
                                }
                            }
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, gy.to_vec()));
                out.push((*b, gy.to_vec()));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                out.push((*a, gy.iter().zip(bd).map(|(g, v)| g * v).collect()));
                out.push((*b, gy.iter().zip(ad).map(|(g, v)| g * v).collect()));
            }
            Op::Scale(a, c) => out.push((*a, gy.iter().map(|g| g * c).collect())),
            Op::Sum(a) => out.push((*a, vec![gy[0]; self.value(*a).len()])),
            Op::Relu(a) => out.push((
                *a,
                gy.iter()
                    .zip(self.data(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )),
            Op::Elu(a) => out.push((
                *a,
                gy.iter()
                    .zip(self.data(*a))
                    .zip(node.value.data())
                    .map(|((g, &x), &y)| if x > 0.0 { *g } else { g * (y + 1.0) })
                    .collect(),
            )),
            Op::Reshape(a) => out.push((*a, gy.to_vec())),
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.tracked(p) {
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            g.extend_from_slice(&gy[r * total + offset..r * total + offset + w]);
                        }
                        out.push((p, g));
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, index } => {
                let s = self.shape(*x);
                let (n, c) = (s[0], s[1]);
                let mut dx = vec![0.0; n * c];
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut dx[i * c..(i + 1) * c];
                    dst.iter_mut().zip(&gy[r * c..(r + 1) * c]).for_each(|(a, v)| *a += v);
                }
                out.push((*x, dx));
            }
            Op::Conv3d { x, k, b, geo } => {
                let (dx, dk, db) = conv3d_backward_raw(geo, self.data(*x), self.data(*k), gy, self.tracked(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*k, dk));
                out.push((*b, db));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let xs = self.shape(*x);
                let (batch, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let count = (batch * spatial) as f64;
                let g = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..batch {
                    for ci in 0..c {
                        let base = (bi * c + ci) * spatial;
                        for s in base..base + spatial {
                            dgamma[ci] += gy[s] * xhat[s];
                            dbeta[ci] += gy[s];
                        }
                    }
                }
                if self.tracked(*x) {
                    let mut dx = vec![0.0; gy.len()];
                    for bi in 0..batch {
                        for ci in 0..c {
                            let base = (bi * c + ci) * spatial;
                            let scale = g[ci] * inv_std[ci];
                            for s in base..base + spatial {
                                dx[s] = if *train {
                                    scale / count
                                        * (count * gy[s] - dbeta[ci] - xhat[s] * dgamma[ci])
                                } else {
                                    scale * gy[s]
                                };
                            }
                        }
                    }
                    out.push((*x, dx));
                }
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (g, &at) in gy.iter().zip(argmax) {
                    dx[at] += g;
                }
                out.push((*x, dx));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, gy.iter().zip(mask).map(|(g, m)| g * m).collect()));
            }
            Op::Softmax(x) => {
                let c = node.value.shape()[1];
                let p = node.value.data();
                let mut dx = vec![0.0; gy.len()];
                for ((dxr, gr), pr) in dx.chunks_mut(c).zip(gy.chunks(c)).zip(p.chunks(c)) {
                    let dot: f64 = gr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dxr[j] = pr[j] * (gr[j] - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let rows = labels.len();
                let c = probs.len() / rows;
                let scale = gy[0] / rows as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * c + l] -= scale;
                }
                out.push((*logits, dx));
            }
        }
        Ok(out)
    }
}

fn small_matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let dst = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            let src = &b[c * n..(c + 1) * n];
            for j in 0..n {
                dst[j] += av * src[j];
            }
        }
    }
}

pub(crate) fn softmax_rows(d: &[f64], rows: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        let row = &d[r * c..(r + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * c..(r + 1) * c];
        let mut total = 0.0;
        for (o, v) in dst.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|o| *o /= total);
    }
    out
}
