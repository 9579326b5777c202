//! Dense row-major tensors of `f64` plus the raw kernels the graph is built on.

use crate::error::{contract_err, shape_err, Error, Result};

/// Dense n-dimensional array. Scalars are stored with shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Accumulated gradient, same length as `data` when present.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return shape_err(format!("shape {shape:?} must be non-empty with positive dims"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {n} elements but data has {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], grad: None }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x], grad: None }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Build a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return shape_err("ragged rows");
        }
        Tensor::matrix(r, c, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` view: a vector is one row, higher ranks fold leading dims.
    pub fn dims2(&self) -> (usize, usize) {
        let cols = *self.shape.last().unwrap();
        (self.data.len() / cols, cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = as_matrix(self)?;
        let (k2, n) = as_matrix(other)?;
        if k != k2 {
            return shape_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Tensor::matrix(m, n, out)
    }

    /// Softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (rows, cols, along_rows) = match (self.shape.len(), axis) {
            (1, 0) => (1, self.data.len(), true),
            (2, 1) => (self.shape[0], self.shape[1], true),
            (2, 0) => (self.shape[0], self.shape[1], false),
            _ => return contract_err(format!("axis {axis} invalid for shape {:?}", self.shape)),
        };
        check_finite(&self.data, "softmax input")?;
        let mut out = self.data.clone();
        if along_rows {
            for r in 0..rows {
                softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
            }
        } else {
            for c in 0..cols {
                let mut col: Vec<f64> = (0..rows).map(|r| out[r * cols + c]).collect();
                softmax_in_place(&mut col);
                for (r, v) in col.into_iter().enumerate() {
                    out[r * cols + c] = v;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    pub fn l2_norm(&self) -> f64 {
        norm(&self.data)
    }
}

fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        s => shape_err(format!("expected a matrix, got shape {s:?}")),
    }
}

/// Cosine similarity of two equal-length nonzero vectors, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return shape_err(format!("cosine of lengths {} and {}", u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

/// Max-subtracted softmax. Entries equal to `-inf` come out as exactly 0.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        xs.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_t_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}
