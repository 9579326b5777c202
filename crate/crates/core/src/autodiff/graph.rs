//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape index
//! is already a topological order and backward is a single reverse sweep.
//! Parameters are referenced by id and never copied into the tape.

use rand::Rng;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{contract_err, shape_err, Error, Result};
use crate::tensor::{self, check_finite, dot, matmul_into, matmul_t_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    Recip(Var),
    Gelu(Var),
    Softmax { x: Var, along_rows: bool },
    MaskedSoftmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MaskedMeanRows { x: Var, mask: Vec<bool>, count: usize },
    NormalizeRows { x: Var, norms: Vec<f64> },
    RowDot(Var, Var),
    Cosine { u: Var, v: Var },
    Sum(Var),
    Stack(Vec<Var>),
    StackRows(Vec<Var>),
    Pick(Var, usize),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, scale: f64 },
    InfoNce { pos: Var, neg: Var, tau: f64, probs: Vec<f64> },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// One forward computation and its tape.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { params: None, nodes: Vec::new(), param_vars: Vec::new() }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph { params: Some(params), nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, t: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_raw(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, rg: bool) -> Result<Var> {
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    // ---- leaves ----

    /// A constant: never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The graph node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a)?;
        let (k2, n) = self.mat_dims(b)?;
        if k != k2 {
            return shape_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push_raw(vec![m, n], out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims(a)?;
        let (n, k2) = self.mat_dims(b)?;
        if k != k2 {
            return shape_err(format!("matmul_t inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_t_into(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push_raw(vec![m, n], out, Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat_dims(a)?;
        let src = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push_raw(vec![n, m], out, Op::Transpose(a), rg)
    }

    fn mat_dims(&self, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => shape_err(format!("expected a matrix, got shape {s:?}")),
        }
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push_raw(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Broadcast a length-`n` vector over every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, n) = self.value(a).dims2();
        if self.value(row).len() != n {
            return shape_err(format!("add_row: row of {} vs {n} cols", self.value(row).len()));
        }
        let r = self.data(row);
        let out: Vec<f64> =
            self.data(a).chunks(n).flat_map(|c| c.iter().zip(r).map(|(x, y)| x + y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(row);
        self.push_raw(shape, out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_raw(shape, out, Op::Scale(a, s), rg)
    }

    /// Multiply every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return shape_err("scale_by expects a scalar factor");
        }
        let k = self.value(s).item();
        let out = self.data(a).iter().map(|x| x * k).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(s);
        self.push_raw(shape, out, Op::ScaleBy(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_raw(shape, out, Op::Relu(a), rg)
    }

    /// Elementwise `1/x`; every element must be nonzero.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.data(a).iter().any(|&x| x == 0.0) {
            return Err(Error::Degenerate("reciprocal of zero".into()));
        }
        let out = self.data(a).iter().map(|x| 1.0 / x).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_raw(shape, out, Op::Recip(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.data(a).iter().map(|&x| gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push_raw(shape, out, Op::Gelu(a), rg)
    }

    // ---- normalisation ----

    /// Softmax along `axis` of a vector (axis 0) or matrix (axis 0 or 1).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let along_rows = match (self.shape(x).len(), axis) {
            (1, 0) | (2, 1) => true,
            (2, 0) => false,
            _ => return contract_err(format!("axis {axis} invalid for shape {:?}", self.shape(x))),
        };
        let out = self.value(x).softmax(axis)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, along_rows }, rg))
    }

    /// Row softmax where `mask[i*n+j] == false` excludes entry `(i, j)`.
    /// A fully masked row yields zeros.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if mask.len() != m * n {
            return shape_err("mask size");
        }
        check_finite(self.data(x), "masked softmax input")?;
        let mut out: Vec<f64> = self
            .data(x)
            .iter()
            .zip(mask)
            .map(|(&v, &keep)| if keep { v } else { f64::NEG_INFINITY })
            .collect();
        for r in 0..m {
            tensor::softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_raw(shape, out, Op::MaskedSoftmax { x }, rg)
    }

    /// Row-wise layer norm with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return shape_err("layer_norm gain/bias width");
        }
        let (xs, g, b) = (self.data(x), self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push_raw(shape, out, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg)
    }

    /// L2-normalise every row; a zero row is a degenerate-input error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        let xs = self.data(x);
        let mut norms = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let nr = tensor::norm(row);
            if nr == 0.0 {
                return Err(Error::Degenerate("normalising a zero vector".into()));
            }
            norms.push(nr);
            out.extend(row.iter().map(|v| v / nr));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_raw(shape, out, Op::NormalizeRows { x, norms }, rg)
    }

    // ---- indexing / structure ----

    /// Gather rows of `table` (`V×d`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.mat_dims(table)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return contract_err(format!("token id {bad} outside vocabulary of {v}"));
        }
        if ids.is_empty() {
            return contract_err("embedding of an empty sequence");
        }
        let t = self.data(table);
        let out: Vec<f64> = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        let rg = self.rg(table);
        self.push_raw(vec![ids.len(), d], out, Op::Embedding { table, ids: ids.to_vec() }, rg)
    }

    /// Inverted dropout driven by `rng`: kept entries are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return contract_err(format!("dropout probability {p} outside [0, 1)"));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_raw(shape, out, Op::Dropout { x, mask }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat_dims(x)?;
        if len == 0 || start + len > n {
            return shape_err(format!("column slice {start}..{} of {n}", start + len));
        }
        let xs = self.data(x);
        let out: Vec<f64> = (0..m).flat_map(|r| xs[r * n + start..r * n + start + len].iter().copied()).collect();
        let rg = self.rg(x);
        self.push_raw(vec![m, len], out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => self.mat_dims(p)?.0,
            None => return contract_err("concat of nothing"),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.mat_dims(p)?;
            if pm != m {
                return shape_err("concat_cols row mismatch");
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push_raw(vec![m, total], out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Mean of the rows whose mask entry is true; result has shape `[n]`.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.mat_dims(x)?;
        if mask.len() != m {
            return shape_err("row mask length");
        }
        let count = mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::Degenerate("mean over zero rows".into()));
        }
        let xs = self.data(x);
        let mut out = vec![0.0; n];
        for r in (0..m).filter(|&r| mask[r]) {
            out.iter_mut().zip(&xs[r * n..(r + 1) * n]).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        let rg = self.rg(x);
        self.push_raw(vec![n], out, Op::MaskedMeanRows { x, mask: mask.to_vec(), count }, rg)
    }

    /// Dot product of matching rows: `[m×n], [m×n] -> [m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (m, n) = self.value(a).dims2();
        let (xa, xb) = (self.data(a), self.data(b));
        let out: Vec<f64> = (0..m).map(|r| dot(&xa[r * n..(r + 1) * n], &xb[r * n..(r + 1) * n])).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push_raw(vec![m], out, Op::RowDot(a, b), rg)
    }

    /// Differentiable cosine similarity of two vectors.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape(u, v, "cosine")?;
        let c = tensor::cosine_similarity(self.data(u), self.data(v))?;
        let rg = self.rg(u) || self.rg(v);
        self.push_raw(vec![1], vec![c], Op::Cosine { u, v }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push_raw(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Stack scalar nodes into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return contract_err("stack of nothing");
        }
        if xs.iter().any(|&x| !self.value(x).is_scalar()) {
            return shape_err("stack expects scalars");
        }
        let out = xs.iter().map(|&x| self.value(x).item()).collect();
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push_raw(vec![xs.len()], out, Op::Stack(xs.to_vec()), rg)
    }

    /// Stack equal-length vectors into a `[len(xs) × n]` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return contract_err("stack of nothing");
        };
        let n = self.value(first).len();
        if xs.iter().any(|&x| self.value(x).len() != n) {
            return shape_err("stack_rows expects equal-length inputs");
        }
        let mut out = Vec::with_capacity(xs.len() * n);
        for &x in xs {
            out.extend_from_slice(self.data(x));
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push_raw(vec![xs.len(), n], out, Op::StackRows(xs.to_vec()), rg)
    }

    /// Select a single element as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let Some(&v) = self.data(x).get(index) else {
            return shape_err(format!("index {index} out of range"));
        };
        let rg = self.rg(x);
        self.push_raw(vec![1], vec![v], Op::Pick(x, index), rg)
    }

    // ---- losses ----

    /// Token cross-entropy of `logits` (`T×V`) against `targets`; positions whose
    /// target equals `pad_id` are skipped and excluded from the mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad_id: usize, reduction: Reduction) -> Result<Var> {
        let (t, v) = self.mat_dims(logits)?;
        if targets.len() != t {
            return shape_err(format!("{} targets for {t} logit rows", targets.len()));
        }
        let targets: Vec<Option<usize>> =
            targets.iter().map(|&id| if id == pad_id { None } else { Some(id) }).collect();
        if let Some(bad) = targets.iter().flatten().find(|&&id| id >= v) {
            return contract_err(format!("target id {bad} outside [0, {v})"));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Degenerate("cross-entropy over an all-pad target".into()));
        }
        check_finite(self.data(logits), "logits")?;
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (r, tgt) in targets.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            if let Some(id) = tgt {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                loss += lse - row[*id];
            }
            tensor::softmax_in_place(row);
        }
        let scale = match reduction {
            Reduction::Mean => 1.0 / count as f64,
            Reduction::Sum => 1.0,
        };
        let rg = self.rg(logits);
        self.push_raw(vec![1], vec![loss * scale], Op::CrossEntropy { logits, targets, probs, scale }, rg)
    }

    /// In-batch contrastive loss. Row `i` treats `pos[i]` as the positive similarity
    /// and `neg[i][j]` for `j != i` as negatives; returns the batch mean of
    /// `-log(e^{pos/τ} / (e^{pos/τ} + Σ_{j≠i} e^{neg_ij/τ}))`.
    pub fn info_nce(&mut self, pos: Var, neg: Var, tau: f64) -> Result<Var> {
        let b = self.value(pos).len();
        if self.shape(neg) != [b, b] {
            return shape_err(format!("negatives {:?} for batch {b}", self.shape(neg)));
        }
        if b < 2 {
            return contract_err("in-batch negatives need a batch of at least 2");
        }
        if tau <= 0.0 {
            return contract_err("temperature must be positive");
        }
        let (ps, ns) = (self.data(pos), self.data(neg));
        check_finite(ps, "positive similarities")?;
        check_finite(ns, "negative similarities")?;
        // row i: [pos_i, neg_i0, ..., neg_i(b-1)] with neg_ii excluded
        let mut probs = vec![0.0; b * (b + 1)];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &mut probs[i * (b + 1)..(i + 1) * (b + 1)];
            row[0] = ps[i] / tau;
            for j in 0..b {
                row[j + 1] = if j == i { f64::NEG_INFINITY } else { ns[i * b + j] / tau };
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[0];
            tensor::softmax_in_place(row);
        }
        let rg = self.rg(pos) || self.rg(neg);
        self.push_raw(vec![1], vec![loss / b as f64], Op::InfoNce { pos, neg, tau, probs }, rg)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return contract_err(format!("backward needs a scalar loss, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                params.push((id, g.clone()));
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = out.dims2().1;
                if self.rg(*a) {
                    self.acc(grads, *a, |ga| matmul_t_into(g, self.data(*b), ga, m, n, k));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, |gb| matmul_tn_into(self.data(*a), g, gb, m, k, n));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = out.dims2().1;
                if self.rg(*a) {
                    self.acc(grads, *a, |ga| matmul_into(g, self.data(*b), ga, m, n, k));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, |gb| matmul_tn_into(g, self.data(*a), gb, m, n, k));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                self.acc(grads, *a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).zip(xb).for_each(|((x, y), z)| *x += y * z));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).zip(xa).for_each(|((x, y), z)| *x += y * z));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                let n = self.value(*row).len();
                self.acc(grads, *row, |gr| g.chunks(n).for_each(|c| add_into(gr, c)));
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * s));
            }
            Op::ScaleBy(a, s) => {
                let k = self.value(*s).item();
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * k));
                let d = dot(g, self.data(*a));
                self.acc(grads, *s, |gs| gs[0] += d);
            }
            Op::Relu(a) => {
                let xa = self.data(*a);
                self.acc(grads, *a, |ga| {
                    ga.iter_mut().zip(g).zip(xa).for_each(|((x, y), z)| {
                        if *z > 0.0 {
                            *x += y
                        }
                    })
                });
            }
            Op::Recip(a) => {
                let xa = self.data(*a);
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).zip(xa).for_each(|((x, y), z)| *x -= y / (z * z)));
            }
            Op::Gelu(a) => {
                let xa = self.data(*a);
                self.acc(grads, *a, |ga| ga.iter_mut().zip(g).zip(xa).for_each(|((x, y), z)| *x += y * gelu_grad(*z)));
            }
            Op::Softmax { x, along_rows } => {
                let y = out.data();
                let (m, n) = out.dims2();
                self.acc(grads, *x, |gx| {
                    if *along_rows {
                        for r in 0..m {
                            let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                            let s = dot(yr, gr);
                            for c in 0..n {
                                gx[r * n + c] += yr[c] * (gr[c] - s);
                            }
                        }
                    } else {
                        for c in 0..n {
                            let s: f64 = (0..m).map(|r| y[r * n + c] * g[r * n + c]).sum();
                            for r in 0..m {
                                gx[r * n + c] += y[r * n + c] * (g[r * n + c] - s);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x } => {
                let y = out.data();
                let (m, n) = out.dims2();
                self.acc(grads, *x, |gx| {
                    for r in 0..m {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let s = dot(yr, gr);
                        for c in 0..n {
                            gx[r * n + c] += yr[c] * (gr[c] - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = out.dims2();
                let gn = self.data(*gain);
                self.acc(grads, *x, |gx| {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = gr.iter().zip(gn).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = dot(&dh, hr);
                        let k = rstd[r] / n as f64;
                        for c in 0..n {
                            gx[r * n + c] += k * (n as f64 * dh[c] - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                });
                self.acc(grads, *gain, |gg| {
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                });
                self.acc(grads, *bias, |gb| g.chunks(n).for_each(|c| add_into(gb, c)));
            }
            Op::Embedding { table, ids } => {
                let d = out.dims2().1;
                self.acc(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.acc(grads, *x, |gx| gx.iter_mut().zip(g).zip(mask).for_each(|((a, b), m)| *a += b * m));
            }
            Op::SliceCols { x, start } => {
                let (m, len) = out.dims2();
                let n = self.value(*x).dims2().1;
                self.acc(grads, *x, |gx| {
                    for r in 0..m {
                        add_into(&mut gx[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    self.acc(grads, p, |gp| {
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::MaskedMeanRows { x, mask, count } => {
                let n = out.len();
                let k = 1.0 / *count as f64;
                self.acc(grads, *x, |gx| {
                    for (r, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
                        gx[r * n..(r + 1) * n].iter_mut().zip(g).for_each(|(a, b)| *a += b * k);
                    }
                });
            }
            Op::NormalizeRows { x, norms } => {
                let (m, n) = out.dims2();
                let y = out.data();
                self.acc(grads, *x, |gx| {
                    for r in 0..m {
                        let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                        let s = dot(yr, gr);
                        for c in 0..n {
                            gx[r * n + c] += (gr[c] - yr[c] * s) / norms[r];
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (m, n) = self.value(*a).dims2();
                let (xa, xb) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[r] * xb[r * n + c];
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for r in 0..m {
                        for c in 0..n {
                            gb[r * n + c] += g[r] * xa[r * n + c];
                        }
                    }
                });
            }
            Op::Cosine { u, v } => {
                let (xu, xv) = (self.data(*u), self.data(*v));
                let (nu, nv) = (tensor::norm(xu), tensor::norm(xv));
                let c = out.item();
                let gs = g[0];
                self.acc(grads, *u, |gu| {
                    for k in 0..xu.len() {
                        gu[k] += gs * (xv[k] / (nu * nv) - c * xu[k] / (nu * nu));
                    }
                });
                self.acc(grads, *v, |gv| {
                    for k in 0..xv.len() {
                        gv[k] += gs * (xu[k] / (nu * nv) - c * xv[k] / (nv * nv));
                    }
                });
            }
            Op::Sum(x) => {
                self.acc(grads, *x, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Stack(xs) => {
                for (k, &x) in xs.iter().enumerate() {
                    self.acc(grads, x, |gx| gx[0] += g[k]);
                }
            }
            Op::StackRows(xs) => {
                let n = g.len() / xs.len();
                for (k, &x) in xs.iter().enumerate() {
                    self.acc(grads, x, |gx| gx.iter_mut().zip(&g[k * n..(k + 1) * n]).for_each(|(a, b)| *a += b));
                }
            }
            Op::Pick(x, index) => {
                self.acc(grads, *x, |gx| gx[*index] += g[0]);
            }
            Op::CrossEntropy { logits, targets, probs, scale } => {
                let v = self.value(*logits).dims2().1;
                let k = g[0] * scale;
                self.acc(grads, *logits, |gl| {
                    for (r, tgt) in targets.iter().enumerate() {
                        if let Some(id) = tgt {
                            let row = &mut gl[r * v..(r + 1) * v];
                            row.iter_mut().zip(&probs[r * v..(r + 1) * v]).for_each(|(a, p)| *a += k * p);
                            row[*id] -= k;
                        }
                    }
                });
            }
            Op::InfoNce { pos, neg, tau, probs } => {
                let b = self.value(*pos).len();
                let k = g[0] / (tau * b as f64);
                self.acc(grads, *pos, |gp| {
                    for i in 0..b {
                        gp[i] += k * (probs[i * (b + 1)] - 1.0);
                    }
                });
                self.acc(grads, *neg, |gn| {
                    for i in 0..b {
                        for j in (0..b).filter(|&j| j != i) {
                            gn[i * b + j] += k * probs[i * (b + 1) + j + 1];
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    /// Parameter gradients in ascending id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}
