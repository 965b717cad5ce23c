//! Dense f64 tensors on a reverse-mode differentiation tape.
//!
//! A [`Graph`] is an append-only tape of [`Tensor`] nodes in topological
//! order; every op records its parents so [`Graph::backward`] can walk the
//! tape once in reverse and accumulate chain-rule gradients. Graphs are
//! rebuilt every training step and are single-use per backward call.
//! Gradient accumulation on tensor reuse is additive.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::VhmError;
use crate::math;
use crate::Result;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense row-major tensor node.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRow { a: TensorId, row: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    AddConst { a: TensorId },
    Tanh { a: TensorId },
    Relu { a: TensorId },
    Softplus { a: TensorId },
    Exp { a: TensorId },
    Log { a: TensorId },
    ClampMin { a: TensorId, c: f64 },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, eps: f64 },
    Embed { table: TensorId, ids: Vec<u32> },
    Concat { a: TensorId, b: TensorId },
    SliceCols { a: TensorId, start: usize },
    Transpose { a: TensorId },
    Reshape { a: TensorId },
    MeanPool { a: TensorId, kept: Vec<usize> },
    TileRows { a: TensorId },
    SumAll { a: TensorId },
    CrossEntropyMean { logits: TensorId, targets: Vec<u32> },
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Topologically ordered computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Tensor>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all nodes from `mark` onward. Used by inference sessions that
    /// repeatedly append decoder steps onto a fixed prefix of the tape.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn data(&self, t: TensorId) -> &[f64] {
        &self.nodes[t.0].data
    }

    pub fn shape(&self, t: TensorId) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn grad(&self, t: TensorId) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar_value(&self, t: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[t.0].data.len(), 1);
        self.nodes[t.0].data[0]
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if numel(&shape) != data.len() {
            return Err(VhmError::Contract(alloc::format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    /// Non-differentiable scalar constant.
    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(numel(&shape), data.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Tensor { shape, data, requires_grad, grad: None, op });
        id
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|t| self.nodes[t.0].requires_grad)
    }

    fn dims2(&self, t: TensorId, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[t.0].shape;
        if s.len() != 2 {
            return Err(VhmError::shape(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    // ── forward ops ────────────────────────────────────────────────────

    /// `C[i][j] = sum_l A[i][l] * B[l][j]` for 2-D inputs.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if k != kb {
            return Err(VhmError::shape("matmul", &self.nodes[a.0].shape, &self.nodes[b.0].shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, vec![m, n], rg, Op::Matmul { a, b }))
    }

    fn elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(VhmError::shape(op_name, &self.nodes[a.0].shape, &self.nodes[b.0].shape));
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(self.nodes[b.0].data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, shape, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(a, b, "div", |x, y| x / y, Op::Div { a, b })
    }

    /// Broadcast-add a row vector (`[n]` or `[1, n]`) to every row of `[m, n]`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (m, n) = self.dims2(a, "add_row")?;
        let rlen = self.nodes[row.0].data.len();
        if rlen != n {
            return Err(VhmError::shape("add_row", &self.nodes[a.0].shape, &self.nodes[row.0].shape));
        }
        let mut data = self.nodes[a.0].data.clone();
        for r in data.chunks_exact_mut(n) {
            for (v, &x) in r.iter_mut().zip(self.nodes[row.0].data.iter()) {
                *v += x;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(data, vec![m, n], rg, Op::AddRow { a, row }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::Scale { a, c })
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x + c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, Op::AddConst { a })
    }

    fn unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(data, shape, rg, op)
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.unary(a, math::tanh, Op::Tanh { a })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.unary(a, |x| x.max(0.0), Op::Relu { a })
    }

    /// Overflow-safe `ln(1 + e^x)`; strictly positive for all finite inputs.
    pub fn softplus(&mut self, a: TensorId) -> TensorId {
        self.unary(a, math::softplus, Op::Softplus { a })
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        self.unary(a, math::exp, Op::Exp { a })
    }

    /// Natural log; caller guarantees strictly positive input.
    pub fn log(&mut self, a: TensorId) -> TensorId {
        self.unary(a, math::ln, Op::Log { a })
    }

    /// Elementwise `max(x, c)`. Gradient is zero where the clamp is active.
    pub fn clamp_min(&mut self, a: TensorId, c: f64) -> TensorId {
        self.unary(a, |x| x.max(c), Op::ClampMin { a, c })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(VhmError::Contract(alloc::format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut max = f64::NEG_INFINITY;
                for s in 0..mid {
                    max = max.max(src[base + s * inner]);
                }
                let mut sum = 0.0;
                for s in 0..mid {
                    let e = math::exp(src[base + s * inner] - max);
                    data[base + s * inner] = e;
                    sum += e;
                }
                for s in 0..mid {
                    data[base + s * inner] /= sum;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, shape, rg, Op::Softmax { a, axis }))
    }

    /// Per-row layer normalization over the last axis with affine params.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let shape = self.nodes[x.0].shape.clone();
        let d = *shape.last().ok_or(VhmError::EmptySequence("layer_norm"))?;
        if self.nodes[gamma.0].data.len() != d || self.nodes[beta.0].data.len() != d {
            return Err(VhmError::shape("layer_norm", &shape, &self.nodes[gamma.0].shape));
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![0.0; src.len()];
        for (row, out) in src.chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / math::sqrt(var + eps);
            for j in 0..d {
                out[j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(data, shape, rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Row lookup into an embedding table `[vocab, d]`.
    pub fn embed(&mut self, table: TensorId, ids: &[u32]) -> Result<TensorId> {
        let (vocab, d) = self.dims2(table, "embed")?;
        if ids.is_empty() {
            return Err(VhmError::EmptySequence("embed"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= vocab {
                return Err(VhmError::Vocab { id, vocab_size: vocab });
            }
            let row = &self.nodes[table.0].data[id as usize * d..(id as usize + 1) * d];
            data.extend_from_slice(row);
        }
        let rg = self.nodes[table.0].requires_grad;
        Ok(self.push(data, vec![ids.len(), d], rg, Op::Embed { table, ids: ids.to_vec() }))
    }

    /// Concatenate along the last axis. Accepts two 1-D tensors or two
    /// 2-D tensors with matching row counts.
    pub fn concat(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let rg = self.any_grad(&[a, b]);
        match (sa.len(), sb.len()) {
            (1, 1) => {
                let mut data = self.nodes[a.0].data.clone();
                data.extend_from_slice(&self.nodes[b.0].data);
                let n = data.len();
                Ok(self.push(data, vec![n], rg, Op::Concat { a, b }))
            }
            (2, 2) if sa[0] == sb[0] => {
                let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
                let mut data = Vec::with_capacity(rows * (ca + cb));
                for r in 0..rows {
                    data.extend_from_slice(&self.nodes[a.0].data[r * ca..(r + 1) * ca]);
                    data.extend_from_slice(&self.nodes[b.0].data[r * cb..(r + 1) * cb]);
                }
                Ok(self.push(data, vec![rows, ca + cb], rg, Op::Concat { a, b }))
            }
            _ => Err(VhmError::shape("concat", &sa, &sb)),
        }
    }

    /// Copy a column range `[start, start + width)` out of a 2-D tensor.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, width: usize) -> Result<TensorId> {
        let (rows, cols) = self.dims2(a, "slice_cols")?;
        if start + width > cols {
            return Err(VhmError::Contract(alloc::format!(
                "slice_cols [{start}, {}) out of range for {cols} columns",
                start + width
            )));
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&self.nodes[a.0].data[r * cols + start..r * cols + start + width]);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![rows, width], rg, Op::SliceCols { a, start }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.dims2(a, "transpose")?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![cols, rows], rg, Op::Transpose { a }))
    }

    pub fn reshape(&mut self, a: TensorId, new_shape: Vec<usize>) -> Result<TensorId> {
        if numel(&new_shape) != self.nodes[a.0].data.len() {
            return Err(VhmError::shape("reshape", &self.nodes[a.0].shape, &new_shape));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, new_shape, rg, Op::Reshape { a }))
    }

    /// Mean over the unmasked rows of `[len, d]`; `mask[i]` keeps row i.
    pub fn mean_pool(&mut self, a: TensorId, mask: &[bool]) -> Result<TensorId> {
        let (rows, d) = self.dims2(a, "mean_pool")?;
        if mask.len() != rows {
            return Err(VhmError::Contract(alloc::format!(
                "mean_pool mask length {} does not match {} rows",
                mask.len(),
                rows
            )));
        }
        let kept: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
        if kept.is_empty() {
            return Err(VhmError::EmptySequence("mean_pool"));
        }
        let mut data = vec![0.0; d];
        for &i in &kept {
            for (v, &x) in data.iter_mut().zip(self.nodes[a.0].data[i * d..(i + 1) * d].iter()) {
                *v += x;
            }
        }
        let inv = 1.0 / kept.len() as f64;
        for v in data.iter_mut() {
            *v *= inv;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![d], rg, Op::MeanPool { a, kept }))
    }

    /// Repeat a 1-D vector as every row of a `[rows, n]` tensor.
    pub fn tile_rows(&mut self, a: TensorId, rows: usize) -> Result<TensorId> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 1 {
            return Err(VhmError::shape("tile_rows", &s, &[]));
        }
        let n = s[0];
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(&self.nodes[a.0].data);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(data, vec![rows, n], rg, Op::TileRows { a }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s], vec![1], rg, Op::SumAll { a })
    }

    /// Mean over rows of `-log softmax(logits[t])[targets[t]]`.
    pub fn cross_entropy_mean(&mut self, logits: TensorId, targets: &[u32]) -> Result<TensorId> {
        let (rows, classes) = self.dims2(logits, "cross_entropy_mean")?;
        if targets.len() != rows {
            return Err(VhmError::Contract(alloc::format!(
                "cross_entropy_mean got {} targets for {} rows",
                targets.len(),
                rows
            )));
        }
        let mut total = 0.0;
        for (t, row) in targets.iter().zip(self.nodes[logits.0].data.chunks_exact(classes)) {
            let t = *t as usize;
            if t >= classes {
                return Err(VhmError::Vocab { id: t as u32, vocab_size: classes });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = math::ln(row.iter().map(|&x| math::exp(x - max)).sum::<f64>()) + max;
            total -= row[t] - lse;
        }
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![total / rows as f64],
            vec![1],
            rg,
            Op::CrossEntropyMean { logits, targets: targets.to_vec() },
        ))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// ancestor with `requires_grad`. The graph is consumed: a second call
    /// is a contract error.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(VhmError::Contract(alloc::format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(VhmError::Contract(
                "graph already consumed by a backward call; rebuild it".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let grad = node.grad.as_deref().expect("grad present");
            step_backward(head, node, grad, &op);
        }
        Ok(())
    }
}

/// One node's contribution to its parents' gradients. `head` is the tape
/// prefix strictly before the node, so every parent is reachable mutably.
fn step_backward(head: &mut [Tensor], node: &Tensor, grad: &[f64], op: &Op) {
    // Owned-accumulator helper: take the parent grad buffer out, add into
    // it, put it back. Handles repeated parents (x op x) by construction.
    fn acc(head: &mut [Tensor], p: TensorId, add: impl FnOnce(&mut [f64], &[Tensor])) {
        if !head[p.0].requires_grad {
            return;
        }
        let n = head[p.0].data.len();
        let mut g = head[p.0].grad.take().unwrap_or_else(|| vec![0.0; n]);
        add(&mut g, head);
        head[p.0].grad = Some(g);
    }

    match *op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = (head[a.0].shape[0], head[a.0].shape[1]);
            let n = head[b.0].shape[1];
            acc(head, a, |ga, head| {
                // dA[i][l] = sum_j G[i][j] * B[l][j]
                let bd = &head[b.0].data;
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    for l in 0..k {
                        let brow = &bd[l * n..(l + 1) * n];
                        ga[i * k + l] += dot(grow, brow);
                    }
                }
            });
            acc(head, b, |gb, head| {
                // dB[l][j] = sum_i A[i][l] * G[i][j]
                let ad = &head[a.0].data;
                for i in 0..m {
                    let grow = &grad[i * n..(i + 1) * n];
                    for l in 0..k {
                        let av = ad[i * k + l];
                        axpy(av, grow, &mut gb[l * n..(l + 1) * n]);
                    }
                }
            });
        }
        Op::Add { a, b } => {
            acc(head, a, |g, _| axpy(1.0, grad, g));
            acc(head, b, |g, _| axpy(1.0, grad, g));
        }
        Op::Sub { a, b } => {
            acc(head, a, |g, _| axpy(1.0, grad, g));
            acc(head, b, |g, _| axpy(-1.0, grad, g));
        }
        Op::Mul { a, b } => {
            acc(head, a, |g, head| {
                for ((gv, &gr), &bv) in g.iter_mut().zip(grad).zip(head[b.0].data.iter()) {
                    *gv += gr * bv;
                }
            });
            acc(head, b, |g, head| {
                for ((gv, &gr), &av) in g.iter_mut().zip(grad).zip(head[a.0].data.iter()) {
                    *gv += gr * av;
                }
            });
        }
        Op::Div { a, b } => {
            acc(head, a, |g, head| {
                for ((gv, &gr), &bv) in g.iter_mut().zip(grad).zip(head[b.0].data.iter()) {
                    *gv += gr / bv;
                }
            });
            acc(head, b, |g, head| {
                let ad = &head[a.0].data;
                let bd = &head[b.0].data;
                for i in 0..g.len() {
                    g[i] -= grad[i] * ad[i] / (bd[i] * bd[i]);
                }
            });
        }
        Op::AddRow { a, row } => {
            let n = head[row.0].data.len();
            acc(head, a, |g, _| axpy(1.0, grad, g));
            acc(head, row, |g, _| {
                for chunk in grad.chunks_exact(n) {
                    axpy(1.0, chunk, g);
                }
            });
        }
        Op::Scale { a, c } => acc(head, a, |g, _| axpy(c, grad, g)),
        Op::AddConst { a } => acc(head, a, |g, _| axpy(1.0, grad, g)),
        Op::Tanh { a } => {
            let y = &node.data;
            acc(head, a, |g, _| {
                for i in 0..g.len() {
                    g[i] += grad[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Relu { a } => {
            acc(head, a, |g, head| {
                let x = &head[a.0].data;
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        g[i] += grad[i];
                    }
                }
            });
        }
        Op::Softplus { a } => {
            acc(head, a, |g, head| {
                let x = &head[a.0].data;
                for i in 0..g.len() {
                    g[i] += grad[i] * math::sigmoid(x[i]);
                }
            });
        }
        Op::Exp { a } => {
            let y = &node.data;
            acc(head, a, |g, _| {
                for i in 0..g.len() {
                    g[i] += grad[i] * y[i];
                }
            });
        }
        Op::Log { a } => {
            acc(head, a, |g, head| {
                let x = &head[a.0].data;
                for i in 0..g.len() {
                    g[i] += grad[i] / x[i];
                }
            });
        }
        Op::ClampMin { a, c } => {
            acc(head, a, |g, head| {
                let x = &head[a.0].data;
                for i in 0..g.len() {
                    if x[i] > c {
                        g[i] += grad[i];
                    }
                }
            });
        }
        Op::Softmax { a, axis } => {
            let (outer, mid, inner) = split_axis(&node.shape, axis);
            let y = &node.data;
            acc(head, a, |g, _| {
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * mid * inner + i;
                        let mut dotv = 0.0;
                        for s in 0..mid {
                            let idx = base + s * inner;
                            dotv += grad[idx] * y[idx];
                        }
                        for s in 0..mid {
                            let idx = base + s * inner;
                            g[idx] += y[idx] * (grad[idx] - dotv);
                        }
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let d = *node.shape.last().unwrap();
            let rows = node.data.len() / d;
            acc(head, x, |g, head| {
                let xd = &head[x.0].data;
                let gm = &head[gamma.0].data;
                for r in 0..rows {
                    let xrow = &xd[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / math::sqrt(var + eps);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        let dxhat = grow[j] * gm[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let df = d as f64;
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        let dxhat = grow[j] * gm[j];
                        g[r * d + j] += inv_std / df * (df * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
            });
            acc(head, gamma, |g, head| {
                let xd = &head[x.0].data;
                for r in 0..rows {
                    let xrow = &xd[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / math::sqrt(var + eps);
                    for j in 0..d {
                        g[j] += grow[j] * (xrow[j] - mean) * inv_std;
                    }
                }
            });
            acc(head, beta, |g, _| {
                for r in 0..rows {
                    axpy(1.0, &grad[r * d..(r + 1) * d], g);
                }
            });
        }
        Op::Embed { table, ref ids } => {
            let d = node.shape[1];
            acc(head, table, |g, _| {
                for (pos, &id) in ids.iter().enumerate() {
                    axpy(1.0, &grad[pos * d..(pos + 1) * d], &mut g[id as usize * d..(id as usize + 1) * d]);
                }
            });
        }
        Op::Concat { a, b } => {
            if node.shape.len() == 1 {
                let ca = head[a.0].data.len();
                acc(head, a, |g, _| axpy(1.0, &grad[..ca], g));
                acc(head, b, |g, _| axpy(1.0, &grad[ca..], g));
            } else {
                let rows = node.shape[0];
                let ca = head[a.0].shape[1];
                let cb = head[b.0].shape[1];
                acc(head, a, |g, _| {
                    for r in 0..rows {
                        axpy(1.0, &grad[r * (ca + cb)..r * (ca + cb) + ca], &mut g[r * ca..(r + 1) * ca]);
                    }
                });
                acc(head, b, |g, _| {
                    for r in 0..rows {
                        axpy(1.0, &grad[r * (ca + cb) + ca..(r + 1) * (ca + cb)], &mut g[r * cb..(r + 1) * cb]);
                    }
                });
            }
        }
        Op::SliceCols { a, start } => {
            let rows = node.shape[0];
            let width = node.shape[1];
            let cols = head[a.0].shape[1];
            acc(head, a, |g, _| {
                for r in 0..rows {
                    axpy(1.0, &grad[r * width..(r + 1) * width], &mut g[r * cols + start..r * cols + start + width]);
                }
            });
        }
        Op::Transpose { a } => {
            let (rows, cols) = (node.shape[0], node.shape[1]);
            acc(head, a, |g, _| {
                for r in 0..rows {
                    for c in 0..cols {
                        g[c * rows + r] += grad[r * cols + c];
                    }
                }
            });
        }
        Op::Reshape { a } => acc(head, a, |g, _| axpy(1.0, grad, g)),
        Op::MeanPool { a, ref kept } => {
            let d = node.data.len();
            let inv = 1.0 / kept.len() as f64;
            acc(head, a, |g, _| {
                for &i in kept {
                    axpy(inv, grad, &mut g[i * d..(i + 1) * d]);
                }
            });
        }
        Op::TileRows { a } => {
            let n = head[a.0].data.len();
            acc(head, a, |g, _| {
                for chunk in grad.chunks_exact(n) {
                    axpy(1.0, chunk, g);
                }
            });
        }
        Op::SumAll { a } => acc(head, a, |g, _| {
            for v in g.iter_mut() {
                *v += grad[0];
            }
        }),
        Op::CrossEntropyMean { logits, ref targets } => {
            let classes = head[logits.0].shape[1];
            let rows = targets.len();
            let inv = grad[0] / rows as f64;
            acc(head, logits, |g, head| {
                let ld = &head[logits.0].data;
                for (r, &t) in targets.iter().enumerate() {
                    let row = &ld[r * classes..(r + 1) * classes];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&x| math::exp(x - max)).sum();
                    let grow = &mut g[r * classes..(r + 1) * classes];
                    for c in 0..classes {
                        let p = math::exp(row[c] - max) / sum;
                        let onehot = if c == t as usize { 1.0 } else { 0.0 };
                        grow[c] += inv * (p - onehot);
                    }
                }
            });
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// `C += A B` with ikj ordering for row-major layouts.
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            axpy(av, &b[l * n..(l + 1) * n], crow);
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}
