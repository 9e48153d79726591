use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{mm_acc, mm_at_acc, mm_bt_acc, softmax_rows};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Additive value for masked attention logits.
pub const MASK_VALUE: f64 = -1e9;

/// Variance floor inside layer normalization.
const LN_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    MeanRows(Var),
    SumAll(Var),
    Square(Var),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Define-by-run computation tape over a borrowed parameter store.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

fn dims2<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidArgument {
            op,
            reason: format!("expected a 2-D tensor, got shape {s:?}"),
        }),
    }
}

fn mismatch<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        Self::with_seed(params, mode, 0)
    }

    /// `seed` drives dropout masks only.
    pub fn with_seed(params: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    /// Records a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: self.params.get(id).clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// a[m,k] · b[k,n]
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul", ta)?;
        let (k2, n) = dims2("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![T::zero(); m * n];
        mm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng)
    }

    /// a[m,k] · b[n,k]ᵀ
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2("matmul_bt", ta)?;
        let (n, k2) = dims2("matmul_bt", tb)?;
        if k != k2 {
            return Err(mismatch("matmul_bt", ta, tb));
        }
        let mut out = vec![T::zero(); m * n];
        mm_bt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul_bt", Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b), ng)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("add", t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", t, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", t, Op::Mul(a, b), ng)
    }

    /// Adds a `[n]` vector to every row of `a` (last axis `n`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if tr.shape() != [n] {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, &r) in chunk.iter_mut().zip(tr.data()) {
                *x += r;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(row);
        self.push("add_row", t, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| x * factor).collect())?;
        let ng = self.needs(a);
        self.push("scale", t, Op::Scale(a, factor), ng)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        let ng = self.needs(a);
        self.push(name, t, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    /// Softmax over the last axis of `a + mask`. The mask is additive and
    /// constant; use [`MASK_VALUE`] to exclude a position.
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.shape() != ta.shape() {
                return Err(mismatch("softmax", ta, m));
            }
        }
        let mut out = vec![T::zero(); ta.numel()];
        softmax_rows(ta.data(), mask.map(Tensor::data), &mut out, ta.cols());
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.needs(a);
        self.push("softmax", t, Op::Softmax(a), ng)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both `[n]`). Zero-variance rows normalize to zero.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        for p in [gamma, beta] {
            if self.value(p).shape() != [n] {
                return Err(mismatch("layer_norm", tx, self.value(p)));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.rows();
        let inv_n = T::of(1.0 / n as f64);
        let mut xhat = vec![T::zero(); tx.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.numel()];
        for r in 0..rows {
            let xr = tx.row(r);
            let mean = xr.iter().copied().sum::<T>() * inv_n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (xr[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = dims2("embedding", tt)?;
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "embedding",
                reason: "empty id list".into(),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::InvalidArgument {
                    op: "embedding",
                    reason: format!("id {id} out of range for table of {v} rows"),
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        let ng = self.needs(table);
        self.push(
            "embedding",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_cols",
            reason: "nothing to concatenate".into(),
        })?;
        let (m, _) = dims2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.value(p))?;
            if r != m {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![m, total], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Stacks 2-D tensors with equal column counts along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_rows",
            reason: "nothing to concatenate".into(),
        })?;
        let (_, n) = dims2("concat_rows", self.value(first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let tp = self.value(p);
            let (r, c) = dims2("concat_rows", tp)?;
            if c != n {
                return Err(mismatch("concat_rows", self.value(first), tp));
            }
            rows += r;
            out.extend_from_slice(tp.data());
        }
        let t = Tensor::new(vec![rows, n], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = dims2("slice_cols", tx)?;
        if len == 0 || start + len > n {
            return Err(TensorError::InvalidArgument {
                op: "slice_cols",
                reason: format!("columns {start}..{} out of range for width {n}", start + len),
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![m, len], out)?;
        let ng = self.needs(x);
        self.push("slice_cols", t, Op::SliceCols { x, start }, ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = dims2("slice_rows", tx)?;
        if len == 0 || start + len > m {
            return Err(TensorError::InvalidArgument {
                op: "slice_rows",
                reason: format!("rows {start}..{} out of range for {m} rows", start + len),
            });
        }
        let t = Tensor::new(vec![len, n], tx.data()[start * n..(start + len) * n].to_vec())?;
        let ng = self.needs(x);
        self.push("slice_rows", t, Op::SliceRows { x, start }, ng)
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push("dropout", t, Op::Dropout { x, mask }, ng)
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = dims2("mean_rows", tx)?;
        let inv = T::of(1.0 / m as f64);
        let mut out = vec![T::zero(); n];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(tx.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let t = Tensor::new(vec![1, n], out)?;
        let ng = self.needs(x);
        self.push("mean_rows", t, Op::MeanRows(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?;
        let ng = self.needs(x);
        self.push("reshape", t, Op::Reshape(x), ng)
    }

    /// Summed token cross-entropy of row-wise softmax(logits) against
    /// `targets` (one class id per row). Returns a `[1]` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, v) = dims2("cross_entropy", tl)?;
        if targets.len() != m {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                reason: format!("{} targets for {m} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                reason: format!("target {bad} out of range for {v} classes"),
            });
        }
        let mut probs = vec![T::zero(); m * v];
        softmax_rows(tl.data(), None, &mut probs, v);
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[t];
        }
        let ng = self.needs(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar node. Parameters the loss does not reach
    /// get zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(TensorError::State(
                "backward called before forward recorded the loss".into(),
            ));
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                reason: format!("loss must be scalar, got shape {:?}", lt.shape()),
            });
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (o, &x) in out.get_mut(*id).data_mut().iter_mut().zip(g) {
                    *o += x;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    mm_bt_acc(g, tb.data(), da, m, n, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    mm_at_acc(ta.data(), g, db, m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                if let Some(da) = self.slot(grads, *a) {
                    mm_acc(g, tb.data(), da, m, n, k);
                }
                if let Some(db) = self.slot(grads, *b) {
                    mm_at_acc(g, ta.data(), db, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(d) = self.slot(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, &y), &bv) in d.iter_mut().zip(g).zip(tb.data()) {
                        *x += y * bv;
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for ((x, &y), &av) in d.iter_mut().zip(g).zip(ta.data()) {
                        *x += y * av;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                let n = self.value(*row).numel();
                if let Some(d) = self.slot(grads, *row) {
                    for chunk in g.chunks(n) {
                        d.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.slot(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *f);
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, &y), &o) in d.iter_mut().zip(g).zip(node.value.data()) {
                        *x += y * (T::one() - o * o);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, &y), &o) in d.iter_mut().zip(g).zip(node.value.data()) {
                        *x += y * o * (T::one() - o);
                    }
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, &y), &inp) in d.iter_mut().zip(g).zip(ta.data()) {
                        if inp > T::zero() {
                            *x += y;
                        }
                    }
                }
            }
            Op::Square(a) => {
                let ta = self.value(*a);
                if let Some(d) = self.slot(grads, *a) {
                    for ((x, &y), &inp) in d.iter_mut().zip(g).zip(ta.data()) {
                        *x += y * (inp + inp);
                    }
                }
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *a) {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(node.value.data().chunks(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((x, &gy), &y) in dr.iter_mut().zip(gr).zip(yr) {
                            *x += y * (gy - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.value.cols();
                let gm = self.value(*gamma).data();
                if let Some(d) = self.slot(grads, *gamma) {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((x, &gy), &h) in d.iter_mut().zip(gr).zip(hr) {
                            *x += gy * h;
                        }
                    }
                }
                if let Some(d) = self.slot(grads, *beta) {
                    for gr in g.chunks(n) {
                        d.iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
                    }
                }
                if let Some(d) = self.slot(grads, *x) {
                    let inv_n = T::of(1.0 / n as f64);
                    let mut dh = vec![T::zero(); n];
                    for (r, (dr, (gr, hr))) in d.chunks_mut(n).zip(g.chunks(n).zip(xhat.chunks(n))).enumerate() {
                        for j in 0..n {
                            dh[j] = gr[j] * gm[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_n;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                        for j in 0..n {
                            dr[j] += rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d_model = node.value.cols();
                if let Some(d) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut d[id * d_model..(id + 1) * d_model];
                        for (x, &y) in dst.iter_mut().zip(&g[r * d_model..(r + 1) * d_model]) {
                            *x += y;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.slot(grads, p) {
                        for (dr, gr) in d.chunks_mut(w).zip(g.chunks(total)) {
                            dr.iter_mut().zip(&gr[offset..offset + w]).for_each(|(x, &y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if let Some(d) = self.slot(grads, p) {
                        d.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, &y)| *x += y);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let n = self.value(*x).cols();
                if let Some(d) = self.slot(grads, *x) {
                    for (dr, gr) in d.chunks_mut(n).zip(g.chunks(w)) {
                        dr[*start..*start + w].iter_mut().zip(gr).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = node.value.cols();
                if let Some(d) = self.slot(grads, *x) {
                    d[start * n..start * n + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, &y)| *x += y);
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.slot(grads, *x) {
                    for ((x, &y), &m) in d.iter_mut().zip(g).zip(mask) {
                        *x += y * m;
                    }
                }
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let n = tx.cols();
                let inv = T::of(1.0 / tx.rows() as f64);
                if let Some(d) = self.slot(grads, *x) {
                    for dr in d.chunks_mut(n) {
                        dr.iter_mut().zip(g).for_each(|(x, &y)| *x += y * inv);
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.slot(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).cols();
                if let Some(d) = self.slot(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let dr = &mut d[r * v..(r + 1) * v];
                        let pr = &probs[r * v..(r + 1) * v];
                        for (x, &p) in dr.iter_mut().zip(pr) {
                            *x += g[0] * p;
                        }
                        dr[t] -= g[0];
                    }
                }
            }
        }
    }
}
