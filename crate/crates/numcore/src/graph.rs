//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! Every forward op appends a node holding its value and enough saved state
//! to run its backward rule. [`Graph::backward`] walks the tape in reverse.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::param::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{Precision, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layer-norm epsilon, added to the variance inside the square root.
pub const LN_EPS: f64 = 1e-5;
/// Probabilities are clamped to [BCE_CLAMP, 1 - BCE_CLAMP] before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        /// d loss / d logits, already scaled by the reduction.
        dlogits: Vec<f64>,
    },
    Bce {
        p: Var,
        dp: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward computation.
///
/// A graph is confined to one thread. Training runs one graph per example and
/// sums the resulting [`ParamGrads`].
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
    precision: Precision,
    rng: Option<ChaCha8Rng>,
    record_traces: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation graph in 32-bit mode with dropout disabled.
    pub fn new() -> Self {
        Self::with_precision(Precision::F32)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            precision,
            rng: None,
            record_traces: false,
        }
    }

    /// Enables dropout, driven by the given generator.
    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn with_traces(mut self, on: bool) -> Self {
        self.record_traces = on;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn record_traces(&self) -> bool {
        self.record_traces
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after `mark` (a previous [`Graph::len`]).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.grads.clear();
        self.params.retain(|_, v| v.0 < mark);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: &'static str, mut value: Tensor, kind: Op, inputs: &[Var]) -> Result<Var> {
        self.precision.round_slice(value.data_mut());
        if !value.is_finite() {
            return Err(NumError::NonFinite { op });
        }
        let requires_grad = match kind {
            Op::Param(_) => true,
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mat(&self, v: Var) -> (usize, usize, &[f64]) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols(), t.data())
    }

    fn rng_mut(&mut self) -> Option<&mut ChaCha8Rng> {
        self.rng.as_mut()
    }

    // ---- leaves ----

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf, &[])
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.constant(Tensor::new(vec![rows, cols], data)?)
    }

    /// Places a parameter on the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let mut value = p.tensor.clone();
        value.set_grad(None);
        let kind = if p.trainable { Op::Param(id) } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad: p.trainable,
            op: kind,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, ad) = self.mat(a);
        let (k2, n, bd) = self.mat(b);
        if k != k2 {
            return Err(NumError::Shape(format!(
                "matmul of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n, d) = self.mat(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push("transpose", Tensor::new(vec![n, m], out)?, Op::Transpose(a), &[a])
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(NumError::Shape(format!("{op} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (m, n, ad) = self.mat(a);
        let out = ad.iter().zip(self.mat(b).2).map(|(x, y)| x + y).collect();
        self.push("add", Tensor::new(vec![m, n], out)?, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-n row vector to every row of an m×n matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n, xd) = self.mat(x);
        let bd = self.value(bias).data();
        if bd.len() != n {
            return Err(NumError::Shape(format!(
                "add_row of {:?} and bias {:?}",
                self.value(x).shape(),
                self.value(bias).shape()
            )));
        }
        let mut out = xd.to_vec();
        for row in out.chunks_mut(n.max(1)) {
            for (o, b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        self.push("add_row", Tensor::new(vec![m, n], out)?, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (m, n, ad) = self.mat(a);
        let out = ad.iter().zip(self.mat(b).2).map(|(x, y)| x * y).collect();
        self.push("mul", Tensor::new(vec![m, n], out)?, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        if c.len() != ad.len() {
            return Err(NumError::Shape(format!("mul_const of {:?} with {} values", self.value(a).shape(), c.len())));
        }
        let out = ad.iter().zip(&c).map(|(x, y)| x * y).collect();
        self.push("mul_const", Tensor::new(vec![m, n], out)?, Op::MulConst(a, c), &[a])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        let out = ad.iter().map(|x| scale * x + shift).collect();
        self.push("affine", Tensor::new(vec![m, n], out)?, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        let out = ad.iter().map(|&x| sigmoid(x)).collect();
        self.push("sigmoid", Tensor::new(vec![m, n], out)?, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        let out = ad.iter().map(|x| x.tanh()).collect();
        self.push("tanh", Tensor::new(vec![m, n], out)?, Op::Tanh(a), &[a])
    }

    /// Inverted dropout. Identity when the graph has no dropout generator.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if rate <= 0.0 || !self.training() {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = 1.0 / (1.0 - rate);
        let rng = self.rng_mut().expect("training graph");
        let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        self.mul_const(a, mask)
    }

    // ---- normalisation ----

    /// Row-wise softmax. Entries whose `mask` bit is true get exactly zero
    /// weight; a fully masked row yields all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        if let Some(mk) = mask {
            if mk.len() != m * n {
                return Err(NumError::Shape(format!("mask of {} entries for {m}x{n} scores", mk.len())));
            }
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &ad[i * n..(i + 1) * n];
            let live = |j: usize| mask.is_none_or(|mk| !mk[i * n + j]);
            let max = (0..n).filter(|&j| live(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in (0..n).filter(|&j| live(j)) {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                z += e;
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o /= z;
            }
        }
        self.push("softmax", Tensor::new(vec![m, n], out)?, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, d, xd) = self.mat(x);
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        if gd.len() != d || bd.len() != d {
            return Err(NumError::Shape(format!(
                "layer_norm of {:?} with gain {:?}",
                self.value(x).shape(),
                self.value(gain).shape()
            )));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = gd[j] * h + bd[j];
            }
        }
        self.push(
            "layer_norm",
            Tensor::new(vec![m, d], out)?,
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            &[x, gain, bias],
        )
    }

    // ---- structure ----

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(NumError::Index(format!("row {i} of {m}-row matrix")));
            }
            out.extend_from_slice(&ad[i * n..(i + 1) * n]);
        }
        self.push("gather_rows", Tensor::new(vec![idx.len(), n], out)?, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.iter().any(|&p| self.shape(p).0 != m) {
            return Err(NumError::Shape("concat_cols with differing row counts".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        if start + len > n {
            return Err(NumError::Index(format!("cols {start}..{} of {n}", start + len)));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&ad[i * n + start..i * n + start + len]);
        }
        self.push("slice_cols", Tensor::new(vec![m, len], out)?, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map_or(0, |&p| self.shape(p).1);
        if parts.iter().any(|&p| self.shape(p).1 != n) {
            return Err(NumError::Shape("concat_rows with differing widths".into()));
        }
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            m += self.shape(p).0;
        }
        self.push("concat_rows", Tensor::new(vec![m, n], out)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n, ad) = self.mat(a);
        if start + len > m {
            return Err(NumError::Index(format!("rows {start}..{} of {m}", start + len)));
        }
        let out = ad[start * n..(start + len) * n].to_vec();
        self.push("slice_rows", Tensor::new(vec![len, n], out)?, Op::SliceRows(a, start), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Sum of several scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return self.constant(Tensor::scalar(0.0));
        };
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    // ---- losses ----

    /// Label-smoothed cross-entropy of row-wise softmax(logits) against
    /// `targets`. Rows whose target equals `pad` are skipped. The smoothed
    /// target puts `1 - eps + eps/V` on the gold index and `eps/V` elsewhere.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], eps: f64, pad: Option<usize>, reduction: Reduction) -> Result<Var> {
        let (m, v, ld) = self.mat(logits);
        if targets.len() != m {
            return Err(NumError::Shape(format!("{} targets for {m} logit rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NumError::Index(format!("target {bad} outside vocabulary of {v}")));
        }
        let live: Vec<bool> = targets.iter().map(|&t| Some(t) != pad).collect();
        let count = live.iter().filter(|&&l| l).count();
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean if count == 0 => 0.0,
            Reduction::Mean => 1.0 / count as f64,
        };
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; m * v];
        for i in (0..m).filter(|&i| live[i]) {
            let row = &ld[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let off = eps / v as f64;
            for j in 0..v {
                let logp = row[j] - lse;
                let q = if j == targets[i] { 1.0 - eps + off } else { off };
                if q > 0.0 {
                    loss -= q * logp;
                }
                dlogits[i * v + j] = scale * (logp.exp() - q);
            }
        }
        self.push("cross_entropy", Tensor::scalar(loss * scale), Op::CrossEntropy { logits, dlogits }, &[logits])
    }

    /// Binary cross-entropy of probabilities `p` against 0/1 labels.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
        let pd = self.value(p).data();
        if pd.len() != labels.len() {
            return Err(NumError::Shape(format!("{} labels for {} probabilities", labels.len(), pd.len())));
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean if pd.is_empty() => 0.0,
            Reduction::Mean => 1.0 / pd.len() as f64,
        };
        let mut loss = 0.0;
        let mut dp = vec![0.0; pd.len()];
        for (i, (&raw, &y)) in pd.iter().zip(labels).enumerate() {
            let q = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
            if q == raw {
                dp[i] = scale * (-y / q + (1.0 - y) / (1.0 - q));
            }
        }
        self.push("bce", Tensor::scalar(loss * scale), Op::Bce { p, dp }, &[p])
    }

    // ---- backward ----

    /// Reverse pass from a scalar node. Returns the gradients of every
    /// trainable parameter that influenced `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads> {
        if self.value(loss).len() != 1 {
            return Err(NumError::Shape(format!("backward needs a scalar, got {:?}", self.value(loss).shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = ParamGrads::default();
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            if let Op::Param(id) = self.nodes[idx].op {
                out.push(id, g.clone());
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k, ad) = self.mat(*a);
                let (_, n, bd) = self.mat(*b);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n, _) = self.mat(*a);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |gx| add_into(gx, g));
                let n = self.value(*bias).len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(n.max(1)) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bd[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * ad[i];
                    }
                });
            }
            Op::MulConst(a, c) => acc(*a, &mut |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * c[i];
                }
            }),
            Op::Affine(a, s) => acc(*a, &mut |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * s;
                }
            }),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = y.cols();
                acc(*a, &mut |ga| {
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            ga[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = self.value(*gain).len();
                let gd = self.value(*gain).data();
                acc(*x, &mut |gx| {
                    for (i, &is) in inv_std.iter().enumerate() {
                        let gr = &g[i * d..(i + 1) * d];
                        let hr = &xhat[i * d..(i + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            gx[i * d + j] += is / d as f64 * (d as f64 * dh - s1 - hr[j] * s2);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += row_g[j] * row_h[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::GatherRows(a, idx_list) => {
                let n = self.value(*a).cols();
                acc(*a, &mut |ga| {
                    for (r, &src) in idx_list.iter().enumerate() {
                        add_into(&mut ga[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |gp| {
                        for i in 0..m {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + off..i * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.value(*a).cols();
                let w = node.value.cols();
                acc(*a, &mut |ga| {
                    for i in 0..node.value.rows() {
                        add_into(&mut ga[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = node.value.cols();
                let len = node.value.len();
                acc(*a, &mut |ga| add_into(&mut ga[start * n..start * n + len], g));
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::CrossEntropy { logits, dlogits } => acc(*logits, &mut |gl| {
                for i in 0..gl.len() {
                    gl[i] += g[0] * dlogits[i];
                }
            }),
            Op::Bce { p, dp } => acc(*p, &mut |gp| {
                for i in 0..gp.len() {
                    gp[i] += g[0] * dp[i];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
