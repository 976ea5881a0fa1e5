//! Wengert tape: eager forward ops that record themselves, replayed in
//! reverse for gradients.
//!
//! A tape is confined to one thread. Batch parallelism happens one tape per
//! sample (see [`crate::numcore::parallel`]); cross-sample couplings such as
//! a contrastive loss run on a small head tape over the pooled vectors, whose
//! seed gradients are then pushed back through each sample tape with
//! [`Tape::backward_seeded`].

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::kernels;
use crate::numcore::{Scalar, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op<S: Scalar> {
    Leaf {
        param: Option<usize>,
    },
    Constant,
    MatMul(ValueId, ValueId),
    Transpose(ValueId),
    Add(ValueId, ValueId),
    Scale(ValueId, S),
    ConcatCols(Vec<ValueId>),
    SliceCols(ValueId, usize, usize),
    Gelu(ValueId),
    /// The output (softmax probabilities) is its own backward state.
    SoftmaxMasked(ValueId),
    LayerNorm {
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: S,
        x_hat: Vec<S>,
    },
    Dropout {
        x: ValueId,
        keep: Arc<Vec<bool>>,
        scale: S,
    },
    MeanRows(ValueId),
    L2Normalize {
        x: ValueId,
        inv_norm: S,
    },
    GatherRows(ValueId, Arc<Vec<usize>>),
    StackRows(Vec<ValueId>),
    LogSoftmax(ValueId),
    PickPerRow(ValueId, Arc<Vec<usize>>),
    MeanAll(ValueId),
    Reshape(ValueId),
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    needs_grad: bool,
    op: Op<S>,
}

/// Gradients keyed by the parameter slot given at leaf registration.
pub struct Gradients<S: Scalar> {
    by_param: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, param: usize) -> Option<&[S]> {
        self.by_param.get(&param).map(|v| v.as_slice())
    }

    /// Gradient for `param`, materializing zeros for parameters the loss
    /// never touched.
    pub fn take_or_zero(&mut self, param: usize, len: usize) -> Vec<S> {
        match self.by_param.remove(&param) {
            Some(v) => {
                debug_assert_eq!(v.len(), len);
                v
            }
            None => vec![S::zero(); len],
        }
    }

    pub fn merge_add(&mut self, other: Gradients<S>) {
        for (pid, g) in other.by_param {
            match self.by_param.get_mut(&pid) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g.iter()) {
                        *a += *b;
                    }
                }
                None => {
                    self.by_param.insert(pid, g);
                }
            }
        }
    }
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, needs_grad: bool, op: Op<S>) -> ValueId {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by a forward op (node {})",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Register a leaf. `param` links the leaf to a model parameter slot so
    /// its gradient shows up in [`Gradients`]; pass `None` for differentiable
    /// inputs whose gradient is only needed as a backward seed source.
    pub fn leaf(&mut self, value: Tensor<S>, param: Option<usize>) -> ValueId {
        let needs = value.requires_grad || param.is_some();
        self.push(value, needs, Op::Leaf { param })
    }

    /// Record a value that gradients never flow into.
    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.push(value, false, Op::Constant)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul(ta.data(), tb.data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, needs, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                detail: format!("{s:?}"),
            });
        }
        let mut out = vec![S::zero(); ta.len()];
        kernels::transpose(ta.data(), s[0], s[1], &mut out);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![s[1], s[0]], out)?, needs, Op::Transpose(a)))
    }

    /// Elementwise add; a 1-D right operand broadcasts over the rows of a
    /// 2-D left operand.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        let out = if sa == sb {
            ta.data()
                .iter()
                .zip(tb.data().iter())
                .map(|(&x, &y)| x + y)
                .collect::<Vec<_>>()
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let n = sb[0];
            let mut out = ta.data().to_vec();
            for (i, v) in out.iter_mut().enumerate() {
                *v += tb.data()[i % n];
            }
            out
        } else {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{sa:?} + {sb:?}"),
            });
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(sa, out)?, needs, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        let ta = self.value(a);
        let out: Vec<S> = ta.data().iter().map(|&x| x * c).collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, needs, Op::Scale(a, c)))
    }

    /// Concatenate 2-D tensors with equal row counts along the last
    /// dimension (merge-heads).
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: format!("row mismatch: {:?}", t.shape()),
                });
            }
            total += t.cols();
        }
        let mut out = vec![S::zero(); rows * total];
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                out[r * total + off..r * total + off + c]
                    .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            needs,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Column slice of a 2-D tensor (split-heads).
    pub fn slice_cols(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::Shape {
                op: "slice_cols",
                detail: format!("cols [{start}, {}) of {s:?}", start + len),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let mut out = vec![S::zero(); rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&ta.data()[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![rows, len], out)?,
            needs,
            Op::SliceCols(a, start, len),
        ))
    }

    pub fn gelu(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        let width = ta.cols().max(1);
        let mut out = vec![S::zero(); ta.len()];
        kernels::gelu_rows(ta.data(), &mut out, width);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, needs, Op::Gelu(a)))
    }

    /// Row softmax over a 2-D tensor with an optional hard mask: disallowed
    /// entries carry exactly zero weight and are excluded from the
    /// normalization. Fails if any row is fully masked.
    pub fn softmax_rows_masked(
        &mut self,
        a: ValueId,
        allowed: Option<Arc<Vec<bool>>>,
    ) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "softmax",
                detail: format!("{s:?}"),
            });
        }
        if let Some(ref m) = allowed {
            if m.len() != ta.len() {
                return Err(Error::Shape {
                    op: "softmax",
                    detail: format!("mask len {} vs {s:?}", m.len()),
                });
            }
        }
        let mut out = vec![S::zero(); ta.len()];
        if let Some(r) = kernels::softmax_rows_masked(
            ta.data(),
            allowed.as_deref().map(|v| &v[..]),
            s[0],
            s[1],
            &mut out,
        ) {
            return Err(Error::numerical(format!("softmax row {r} is fully masked")));
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(s, out)?, needs, Op::SoftmaxMasked(a)))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gain: ValueId,
        bias: ValueId,
        eps: S,
    ) -> Result<ValueId> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let s = tx.shape().to_vec();
        let cols = tx.cols();
        if tg.shape() != [cols] || tb.shape() != [cols] {
            return Err(Error::Shape {
                op: "layer_norm",
                detail: format!("x {s:?}, gain {:?}, bias {:?}", tg.shape(), tb.shape()),
            });
        }
        let rows = tx.len() / cols;
        let mut out = vec![S::zero(); tx.len()];
        let mut x_hat = vec![S::zero(); tx.len()];
        kernels::layer_norm_rows(
            tx.data(),
            tg.data(),
            tb.data(),
            eps,
            rows,
            cols,
            &mut out,
            &mut x_hat,
        );
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(s, out)?,
            needs,
            Op::LayerNorm {
                x,
                gain,
                bias,
                eps,
                x_hat,
            },
        ))
    }

    /// Train-time dropout: Bernoulli zeroing with 1/(1-p) rescale so the
    /// evaluation path needs no adjustment. `p = 0` is the identity.
    pub fn dropout(&mut self, a: ValueId, p: f64, rng: &mut ChaCha8Rng) -> Result<ValueId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::numerical(format!("dropout p={p} outside [0,1)")));
        }
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        if p == 0.0 {
            let keep = Arc::new(vec![true; ta.len()]);
            let out = ta.data().to_vec();
            let needs = self.needs(a);
            return Ok(self.push(
                Tensor::new(shape, out)?,
                needs,
                Op::Dropout {
                    x: a,
                    keep,
                    scale: S::one(),
                },
            ));
        }
        let p32 = p as f32;
        let keep: Vec<bool> = (0..ta.len()).map(|_| rng.gen::<f32>() >= p32).collect();
        let scale = S::from_f64(1.0 / (1.0 - p));
        let out: Vec<S> = ta
            .data()
            .iter()
            .zip(keep.iter())
            .map(|(&v, &k)| if k { v * scale } else { S::zero() })
            .collect();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, out)?,
            needs,
            Op::Dropout {
                x: a,
                keep: Arc::new(keep),
                scale,
            },
        ))
    }

    /// Column means of a 2-D tensor: [m, n] -> [n].
    pub fn mean_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Shape {
                op: "mean_rows",
                detail: format!("{s:?}"),
            });
        }
        let (m, n) = (s[0], s[1]);
        let inv = S::one() / S::from_usize(m);
        let mut out = vec![S::zero(); n];
        for r in 0..m {
            for j in 0..n {
                out[j] += ta.data()[r * n + j];
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(out), needs, Op::MeanRows(a)))
    }

    /// Normalize a vector to unit L2 length. Fails on the zero vector.
    pub fn l2_normalize(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.shape().len() != 1 {
            return Err(Error::Shape {
                op: "l2_normalize",
                detail: format!("{:?}", ta.shape()),
            });
        }
        let norm = ta.data().iter().map(|&x| x * x).sum::<S>().sqrt();
        if norm == S::zero() {
            return Err(Error::numerical("l2_normalize of the zero vector"));
        }
        let inv_norm = S::one() / norm;
        let out: Vec<S> = ta.data().iter().map(|&x| x * inv_norm).collect();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::vector(out),
            needs,
            Op::L2Normalize { x: a, inv_norm },
        ))
    }

    /// Gather rows of a 2-D tensor by index (embedding lookup, position
    /// selection). Repeated indices accumulate in the backward pass.
    pub fn gather_rows(&mut self, a: ValueId, idx: Arc<Vec<usize>>) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("{s:?}"),
            });
        }
        let n = s[1];
        let mut out = vec![S::zero(); idx.len() * n];
        for (r, &i) in idx.iter().enumerate() {
            if i >= s[0] {
                return Err(Error::data(format!(
                    "gather_rows: row {i} out of {} rows",
                    s[0]
                )));
            }
            out[r * n..(r + 1) * n].copy_from_slice(&ta.data()[i * n..(i + 1) * n]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            needs,
            Op::GatherRows(a, idx),
        ))
    }

    /// Stack 1-D vectors of equal length into a 2-D tensor.
    pub fn stack_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "stack_rows",
                detail: "no inputs".into(),
            });
        }
        let n = self.value(parts[0]).len();
        let mut out = Vec::with_capacity(parts.len() * n);
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 || t.len() != n {
                return Err(Error::Shape {
                    op: "stack_rows",
                    detail: format!("expected [{n}], got {:?}", t.shape()),
                });
            }
            out.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(vec![parts.len(), n], out)?,
            needs,
            Op::StackRows(parts.to_vec()),
        ))
    }

    /// Row log-softmax of a 2-D tensor.
    pub fn log_softmax_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "log_softmax",
                detail: format!("{s:?}"),
            });
        }
        let mut out = vec![S::zero(); ta.len()];
        kernels::log_softmax_rows(ta.data(), s[0], s[1], &mut out);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(s, out)?, needs, Op::LogSoftmax(a)))
    }

    /// out[r] = a[r, idx[r]] for a 2-D tensor: one element per row.
    pub fn pick_per_row(&mut self, a: ValueId, idx: Arc<Vec<usize>>) -> Result<ValueId> {
        let ta = self.value(a);
        let s = ta.shape().to_vec();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(Error::Shape {
                op: "pick_per_row",
                detail: format!("{s:?} with {} indices", idx.len()),
            });
        }
        let n = s[1];
        let mut out = Vec::with_capacity(s[0]);
        for (r, &j) in idx.iter().enumerate() {
            if j >= n {
                return Err(Error::data(format!("pick_per_row: col {j} out of {n}")));
            }
            out.push(ta.data()[r * n + j]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(out), needs, Op::PickPerRow(a, idx)))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::Shape {
                op: "mean_all",
                detail: "empty input".into(),
            });
        }
        let inv = S::one() / S::from_usize(ta.len());
        let sum: S = ta.data().iter().copied().sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(sum * inv), needs, Op::MeanAll(a)))
    }

    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let t = self.value(a).reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(t, needs, Op::Reshape(a)))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss with seed gradient 1.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        self.backward_seeded(&[(loss, vec![S::one()])])
    }

    /// Reverse sweep from several outputs at once, each with an explicit
    /// seed gradient of matching element count.
    pub fn backward_seeded(&self, seeds: &[(ValueId, Vec<S>)]) -> Result<Gradients<S>> {
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            let want = self.value(*id).len();
            if seed.len() != want {
                return Err(Error::Shape {
                    op: "backward",
                    detail: format!("seed has {} elements, output has {want}", seed.len()),
                });
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![S::zero(); want]);
            for (a, b) in slot.iter_mut().zip(seed.iter()) {
                *a += *b;
            }
        }

        let mut by_param: HashMap<usize, Vec<S>> = HashMap::new();
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads, &mut by_param);
        }
        Ok(Gradients { by_param })
    }

    fn add_grad(&self, grads: &mut [Option<Vec<S>>], id: ValueId, contrib: impl FnOnce(&mut [S])) {
        if !self.needs(id) {
            return;
        }
        let len = self.value(id).len();
        let slot = grads[id.0].get_or_insert_with(|| vec![S::zero(); len]);
        contrib(slot);
    }

    fn accumulate(
        &self,
        idx: usize,
        g: &[S],
        grads: &mut [Option<Vec<S>>],
        by_param: &mut HashMap<usize, Vec<S>>,
    ) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { param } => {
                if let Some(pid) = param {
                    let slot = by_param
                        .entry(*pid)
                        .or_insert_with(|| vec![S::zero(); g.len()]);
                    for (a, b) in slot.iter_mut().zip(g.iter()) {
                        *a += *b;
                    }
                }
            }
            Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                self.add_grad(grads, *a, |ga| {
                    let mut tmp = vec![S::zero(); m * k];
                    kernels::matmul_bt(g, tb.data(), m, n, k, &mut tmp);
                    for (x, y) in ga.iter_mut().zip(tmp.iter()) {
                        *x += *y;
                    }
                });
                self.add_grad(grads, *b, |gb| {
                    let mut tmp = vec![S::zero(); k * n];
                    kernels::matmul_at(ta.data(), g, k, m, n, &mut tmp);
                    for (x, y) in gb.iter_mut().zip(tmp.iter()) {
                        *x += *y;
                    }
                });
            }
            Op::Transpose(a) => {
                let (rows, cols) = {
                    let s = node.value.shape();
                    (s[0], s[1])
                };
                self.add_grad(grads, *a, |ga| {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.add_grad(grads, *a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g.iter()) {
                        *x += *y;
                    }
                });
                let blen = self.value(*b).len();
                self.add_grad(grads, *b, |gb| {
                    if blen == g.len() {
                        for (x, y) in gb.iter_mut().zip(g.iter()) {
                            *x += *y;
                        }
                    } else {
                        // broadcast add: sum over rows
                        for (i, y) in g.iter().enumerate() {
                            gb[i % blen] += *y;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.add_grad(grads, *a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g.iter()) {
                        *x += *y * c;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.add_grad(grads, p, |gp| {
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols(a, start, len) => {
                let cols = self.value(*a).cols();
                let rows = self.value(*a).rows();
                let (start, len) = (*start, *len);
                self.add_grad(grads, *a, |ga| {
                    for r in 0..rows {
                        for j in 0..len {
                            ga[r * cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let tx = self.value(*a);
                self.add_grad(grads, *a, |ga| {
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += *y * kernels::gelu_grad(tx.data()[i]);
                    }
                });
            }
            Op::SoftmaxMasked(a) => {
                // dx_j = p_j * (g_j - sum_l g_l p_l), per row; masked entries
                // have p = 0 and thus zero gradient.
                let p = node.value.data();
                let cols = node.value.cols();
                let rows = node.value.rows();
                self.add_grad(grads, *a, |ga| {
                    for r in 0..rows {
                        let pr = &p[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut dot = S::zero();
                        for (pv, gv) in pr.iter().zip(gr.iter()) {
                            dot += *pv * *gv;
                        }
                        for j in 0..cols {
                            ga[r * cols + j] += pr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                eps,
                x_hat,
            } => {
                let cols = node.value.cols();
                let rows = node.value.rows();
                let tg = self.value(*gain).data();
                let tx = self.value(*x);
                let eps = *eps;
                self.add_grad(grads, *x, |gx| {
                    let inv_n = S::one() / S::from_usize(cols);
                    for r in 0..rows {
                        let xr = &tx.data()[r * cols..(r + 1) * cols];
                        let hr = &x_hat[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        // recover inv_std from x and x_hat-free stats
                        let mut mean = S::zero();
                        for &v in xr {
                            mean += v;
                        }
                        mean = mean * inv_n;
                        let mut var = S::zero();
                        for &v in xr {
                            let d = v - mean;
                            var += d * d;
                        }
                        var = var * inv_n;
                        let inv_std = S::one() / (var + eps).sqrt();
                        let mut sum_dh = S::zero();
                        let mut sum_dh_h = S::zero();
                        for j in 0..cols {
                            let dh = gr[j] * tg[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..cols {
                            let dh = gr[j] * tg[j];
                            gx[r * cols + j] +=
                                inv_std * (dh - inv_n * sum_dh - hr[j] * inv_n * sum_dh_h);
                        }
                    }
                });
                self.add_grad(grads, *gain, |gg| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gg[j] += g[r * cols + j] * x_hat[r * cols + j];
                        }
                    }
                });
                self.add_grad(grads, *bias, |gb| {
                    for r in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[r * cols + j];
                        }
                    }
                });
            }
            Op::Dropout { x, keep, scale } => {
                let scale = *scale;
                self.add_grad(grads, *x, |gx| {
                    for (i, y) in g.iter().enumerate() {
                        if keep[i] {
                            gx[i] += *y * scale;
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let inv = S::one() / S::from_usize(m);
                self.add_grad(grads, *a, |ga| {
                    for r in 0..m {
                        for j in 0..n {
                            ga[r * n + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::L2Normalize { x, inv_norm } => {
                let y = node.value.data();
                let inv_norm = *inv_norm;
                self.add_grad(grads, *x, |gx| {
                    let mut dot = S::zero();
                    for (yv, gv) in y.iter().zip(g.iter()) {
                        dot += *yv * *gv;
                    }
                    for i in 0..y.len() {
                        gx[i] += inv_norm * (g[i] - y[i] * dot);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = node.value.cols();
                self.add_grad(grads, *a, |ga| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            ga[i * n + j] += g[r * n + j];
                        }
                    }
                });
            }
            Op::StackRows(parts) => {
                let n = node.value.cols();
                for (r, &p) in parts.iter().enumerate() {
                    self.add_grad(grads, p, |gp| {
                        for j in 0..n {
                            gp[j] += g[r * n + j];
                        }
                    });
                }
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax(x) * rowsum(g); softmax = exp(self value)
                let y = node.value.data();
                let cols = node.value.cols();
                let rows = node.value.rows();
                self.add_grad(grads, *a, |ga| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let mut rowsum = S::zero();
                        for gv in gr {
                            rowsum += *gv;
                        }
                        for j in 0..cols {
                            ga[r * cols + j] += gr[j] - yr[j].exp() * rowsum;
                        }
                    }
                });
            }
            Op::PickPerRow(a, idx) => {
                let n = self.value(*a).cols();
                self.add_grad(grads, *a, |ga| {
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * n + j] += g[r];
                    }
                });
            }
            Op::MeanAll(a) => {
                let len = self.value(*a).len();
                let inv = S::one() / S::from_usize(len);
                self.add_grad(grads, *a, |ga| {
                    for x in ga.iter_mut() {
                        *x += g[0] * inv;
                    }
                });
            }
            Op::Reshape(a) => {
                self.add_grad(grads, *a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g.iter()) {
                        *x += *y;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).unwrap(),
            Some(0),
        );
        // sum(x) = mean_all(x) * len
        let m = tape.mean_all(x).unwrap();
        let loss = tape.scale(m, 6.0).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        assert_eq!(grads.take_or_zero(0, 6), vec![1.0; 6]);
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(vec![1, 1], vec![3.0]).unwrap(), Some(0));
        let y = tape.matmul(x, x).unwrap();
        let mut grads = tape.backward(y).unwrap();
        assert_eq!(grads.take_or_zero(0, 1), vec![6.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad(), Some(0));
        let _unused = tape.leaf(Tensor::vector(vec![5.0]).with_grad(), Some(1));
        let x2 = tape.reshape(x, vec![1, 2]).unwrap();
        let m = tape.mean_all(x2).unwrap();
        let mut grads = tape.backward(m).unwrap();
        assert_eq!(grads.take_or_zero(0, 2), vec![0.5, 0.5]);
        assert_eq!(grads.take_or_zero(1, 1), vec![0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), Some(0));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn masked_softmax_row_sums_to_one_and_masked_is_zero() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let p = tape
            .softmax_rows_masked(x, Some(Arc::new(vec![true, false])))
            .unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 0.0]);
    }

    #[test]
    fn dropout_p0_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(
            Tensor::vector(vec![1.0, -2.0, 3.0])
                .reshaped(vec![1, 3])
                .unwrap(),
        );
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn dropout_mean_preserved_over_many_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = 0.3;
        let n = 10_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(Tensor::new(vec![1, 8], vec![1.0; 8]).unwrap());
            let y = tape.dropout(x, p, &mut rng).unwrap();
            acc += tape.value(y).data().iter().sum::<f32>() as f64 / 8.0;
        }
        let mean = acc / n as f64;
        assert!(
            (mean - 1.0).abs() < 0.02,
            "dropout mean {mean} drifted beyond 2%"
        );
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 4], vec![7.0; 4]).unwrap());
        let gain = tape.constant(Tensor::vector(vec![1.0; 4]));
        let bias = tape.constant(Tensor::vector(vec![0.0; 4]));
        let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn multi_seed_accumulates() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::vector(vec![2.0]).with_grad(), Some(0));
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.scale(x, 5.0).unwrap();
        let mut grads = tape
            .backward_seeded(&[(a, vec![1.0]), (b, vec![1.0])])
            .unwrap();
        assert_eq!(grads.take_or_zero(0, 1), vec![8.0]);
    }
}
