//! Dense f64 tensors with reverse-mode gradients on a linear tape.
//!
//! The op set is exactly what the encoder/attention/decoder stack needs:
//! matmul, elementwise add/mul, relu/gelu, softmax, layer norm, token
//! embedding lookup, row/column slicing and stacking, a fused
//! weighted-pool reduction, and masked cross-entropy. Everything runs in
//! f64 with fixed sequential reduction order so repeated runs are
//! bitwise identical.

mod adam;
mod gradcheck;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_corrupted, max_rel_err, GradCheckReport};
pub use params::{BoundParams, ParamStore};

use crate::error::{Result, SctgError};

/// A named value outside any tape: parameters, inputs, loaded checkpoints.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(SctgError::DimMismatch {
                op: "tensor",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let mut t = Tensor::new(data, shape)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Relu { a: Var },
    Gelu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: f64 },
    CrossEntropy { logits: Var, targets: Vec<usize>, active: Vec<bool> },
    Sum { a: Var },
    MeanRows { a: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    Embed { table: Var, indices: Vec<usize> },
    WeightedPool { weights: Var, values: Var, axis: usize },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Linear record of executed operations. Nodes are appended in execution
/// order, so reverse iteration is a valid reverse-topological walk and
/// backward touches each node exactly once.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.044715;

fn gelu_forward(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let inner = c * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = c * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

/// Right-aligned broadcast: the shorter shape is padded with leading 1s;
/// every axis must match or be 1.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

/// Flat index into `operand_shape` (padded) for coordinate `coords` of the
/// broadcast output; broadcast axes read index 0.
fn broadcast_index(coords: &[usize], padded: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for d in (0..padded.len()).rev() {
        let c = if padded[d] == 1 { 0 } else { coords[d] };
        idx += c * stride;
        stride *= padded[d];
    }
    idx
}

fn for_each_coord(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let numel: usize = shape.iter().product();
    let mut coords = vec![0usize; shape.len()];
    for flat in 0..numel {
        let mut rem = flat;
        for d in (0..shape.len()).rev() {
            coords[d] = rem % shape[d];
            rem /= shape[d];
        }
        f(&coords, flat);
    }
}

/// Sum `grad` (shaped `from`) down to `to` by adding over broadcast axes.
fn reduce_grad(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let padded = pad_shape(to, from.len());
    let mut out = vec![0.0; to.iter().product()];
    for_each_coord(from, |coords, flat| {
        out[broadcast_index(coords, &padded)] += grad[flat];
    });
    out
}

fn accumulate(target: &mut Option<Vec<f64>>, numel: usize, src: &[f64]) {
    let buf = target.get_or_insert_with(|| vec![0.0; numel]);
    for (t, s) in buf.iter_mut().zip(src) {
        *t += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded non-leaf operations.
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n.op, Op::Leaf)).count()
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of a single-element node.
    pub fn value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.node(v).data.len(), 1);
        self.node(v).data[0]
    }

    /// Gradient buffer, present after `backward` for nodes on a
    /// requires-grad path.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(SctgError::DimMismatch {
                op: "leaf",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(self.push(data, shape.to_vec(), requires_grad, Op::Leaf))
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.data.clone(), &t.shape, t.requires_grad)
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    // ── Forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SctgError::DimMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.node(a).data, &self.node(b).data, m, k, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, vec![m, n], rg, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(SctgError::DimMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let pa = pad_shape(&sa, out_shape.len());
        let pb = pad_shape(&sb, out_shape.len());
        let mut data = vec![0.0; out_shape.iter().product()];
        {
            let (da, db) = (&self.node(a).data, &self.node(b).data);
            for_each_coord(&out_shape, |coords, flat| {
                data[flat] = f(da[broadcast_index(coords, &pa)], db[broadcast_index(coords, &pb)]);
            });
        }
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, out_shape, rg, op))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.node(a).data.iter().map(|x| x * c).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.node(a).requires_grad;
        self.push(data, shape, rg, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.node(a).data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.node(a).requires_grad;
        self.push(data, shape, rg, Op::Relu { a })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.node(a).data.iter().map(|&x| gelu_forward(x)).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.node(a).requires_grad;
        self.push(data, shape, rg, Op::Gelu { a })
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(SctgError::BadAxis { axis, shape });
        }
        let axis_len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = &self.node(a).data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * axis_len * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..axis_len {
                    max = max.max(src[at(j)]);
                }
                let mut sum = 0.0;
                for j in 0..axis_len {
                    let e = (src[at(j)] - max).exp();
                    data[at(j)] = e;
                    sum += e;
                }
                for j in 0..axis_len {
                    data[at(j)] /= sum;
                }
            }
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, shape, rg, Op::Softmax { a, axis }))
    }

    /// Per-row normalization over the last axis, then affine gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(SctgError::BadAxis { axis: 0, shape: shape.clone() })?;
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(SctgError::DimMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gain).to_vec(),
            });
        }
        let rows = self.node(x).data.len() / d;
        let mut data = vec![0.0; rows * d];
        {
            let src = &self.node(x).data;
            let g = &self.node(gain).data;
            let b = &self.node(bias).data;
            for r in 0..rows {
                let row = &src[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                for j in 0..d {
                    data[r * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
                }
            }
        }
        let rg = self.node(x).requires_grad
            || self.node(gain).requires_grad
            || self.node(bias).requires_grad;
        Ok(self.push(data, self.shape(x).to_vec(), rg, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Mean negative log-softmax probability of `targets` over rows where
    /// `active` is true (padding positions excluded from the mean).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], active: &[bool]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || targets.len() != shape[0] || active.len() != shape[0] {
            return Err(SctgError::DimMismatch {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let (rows, vocab) = (shape[0], shape[1]);
        for &t in targets {
            if t >= vocab {
                return Err(SctgError::IndexOutOfRange { index: t, vocab });
            }
        }
        let n_active = active.iter().filter(|&&a| a).count();
        if n_active == 0 {
            return Err(SctgError::Config("cross_entropy: no active positions".into()));
        }
        let src = &self.node(logits).data;
        let mut total = 0.0;
        for r in 0..rows {
            if !active[r] {
                continue;
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[r]];
        }
        let rg = self.node(logits).requires_grad;
        Ok(self.push(
            vec![total / n_active as f64],
            vec![1],
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                active: active.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.node(a).data.iter().sum();
        let rg = self.node(a).requires_grad;
        self.push(vec![s], vec![1], rg, Op::Sum { a })
    }

    /// Mean over the rows of a matrix: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(SctgError::DimMismatch { op: "mean_rows", lhs: shape, rhs: vec![] });
        }
        let (r, c) = (shape[0], shape[1]);
        let src = &self.node(a).data;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += src[i * c + j];
            }
        }
        for v in data.iter_mut() {
            *v /= r as f64;
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, vec![1, c], rg, Op::MeanRows { a }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(SctgError::DimMismatch { op: "transpose", lhs: shape, rhs: vec![] });
        }
        let (r, c) = (shape[0], shape[1]);
        let src = &self.node(a).data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, vec![c, r], rg, Op::Transpose { a }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.node(a).data.len() {
            return Err(SctgError::DimMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.node(a).data.clone();
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, shape.to_vec(), rg, Op::Reshape { a }))
    }

    /// Vertical stack of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(SctgError::Config("concat_rows: empty part list".into()));
        }
        let cols = self.shape(parts[0]).get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(SctgError::DimMismatch {
                    op: "concat_rows",
                    lhs: s.to_vec(),
                    rhs: vec![rows, cols],
                });
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.node(p).data);
        }
        let rg = parts.iter().any(|&p| self.node(p).requires_grad);
        Ok(self.push(data, vec![rows, cols], rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// Contiguous row slice `[start, start+len)` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[0] {
            return Err(SctgError::DimMismatch {
                op: "slice_rows",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let c = shape[1];
        let data = self.node(a).data[start * c..(start + len) * c].to_vec();
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, vec![len, c], rg, Op::SliceRows { a, start }))
    }

    /// Contiguous column slice of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[1] {
            return Err(SctgError::DimMismatch {
                op: "slice_cols",
                lhs: shape,
                rhs: vec![start, len],
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let src = &self.node(a).data;
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, vec![r, len], rg, Op::SliceCols { a, start }))
    }

    /// Horizontal stack of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(SctgError::Config("concat_cols: empty part list".into()));
        }
        let rows = self.shape(parts[0]).first().copied().unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(SctgError::DimMismatch {
                    op: "concat_cols",
                    lhs: s.to_vec(),
                    rhs: vec![rows, cols],
                });
            }
            cols += s[1];
        }
        let mut data = vec![0.0; rows * cols];
        let mut offset = 0;
        for &p in parts {
            let pc = self.shape(p)[1];
            let src = &self.node(p).data;
            for i in 0..rows {
                data[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.node(p).requires_grad);
        Ok(self.push(data, vec![rows, cols], rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Gather rows of an embedding table: `[v, d]` + indices -> `[l, d]`.
    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(SctgError::DimMismatch { op: "embed", lhs: shape, rhs: vec![] });
        }
        let (v, d) = (shape[0], shape[1]);
        for &i in indices {
            if i >= v {
                return Err(SctgError::IndexOutOfRange { index: i, vocab: v });
            }
        }
        let src = &self.node(table).data;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.node(table).requires_grad;
        Ok(self.push(
            data,
            vec![indices.len(), d],
            rg,
            Op::Embed { table, indices: indices.to_vec() },
        ))
    }

    /// Weighted sum of value rows along one grid axis.
    ///
    /// `weights` is `[r, c]`, `values` is `[r, c, d]`.
    /// axis 0: `out[c, :] = sum_r w[r, c] * v[r, c, :]`  -> `[c, d]`
    /// axis 1: `out[r, :] = sum_c w[r, c] * v[r, c, :]`  -> `[r, d]`
    pub fn weighted_pool(&mut self, weights: Var, values: Var, axis: usize) -> Result<Var> {
        let ws = self.shape(weights).to_vec();
        let vs = self.shape(values).to_vec();
        if ws.len() != 2 || vs.len() != 3 || ws[0] != vs[0] || ws[1] != vs[1] || axis > 1 {
            return Err(SctgError::DimMismatch { op: "weighted_pool", lhs: ws, rhs: vs });
        }
        let (r, c, d) = (vs[0], vs[1], vs[2]);
        let out_rows = if axis == 0 { c } else { r };
        let mut data = vec![0.0; out_rows * d];
        {
            let w = &self.node(weights).data;
            let v = &self.node(values).data;
            for i in 0..r {
                for j in 0..c {
                    let wv = w[i * c + j];
                    let vrow = &v[(i * c + j) * d..(i * c + j + 1) * d];
                    let out_row = if axis == 0 { j } else { i };
                    let orow = &mut data[out_row * d..(out_row + 1) * d];
                    for (o, &x) in orow.iter_mut().zip(vrow) {
                        *o += wv * x;
                    }
                }
            }
        }
        let rg = self.node(weights).requires_grad || self.node(values).requires_grad;
        Ok(self.push(data, vec![out_rows, d], rg, Op::WeightedPool { weights, values, axis }))
    }

    /// Non-finite check for forward activations, named by call site.
    pub fn ensure_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.node(v).data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(SctgError::NonFinite { context: context.to_string() })
        }
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates `grad` on every node
    /// along a requires-grad path. Returns the number of adjoint
    /// applications (one per visited non-leaf node).
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.node(loss).data.len() != 1 {
            return Err(SctgError::DimMismatch {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let mut visits = 0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let grad = self.nodes[i].grad.clone().unwrap();
            let op = self.nodes[i].op.clone();
            let out_shape = self.nodes[i].shape.clone();
            let out_data_idx = i;
            visits += 1;
            self.apply_adjoint(&op, &grad, &out_shape, out_data_idx);
        }
        Ok(visits)
    }

    fn add_grad(&mut self, v: Var, src: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].data.len();
        accumulate(&mut self.nodes[v.0].grad, numel, src);
    }

    fn apply_adjoint(&mut self, op: &Op, grad: &[f64], out_shape: &[usize], out_idx: usize) {
        match op {
            Op::Leaf => {}

            Op::MatMul { a, b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.node(*a).requires_grad {
                    // dA = dC * B^T
                    let bt = {
                        let bd = &self.node(*b).data;
                        let mut t = vec![0.0; k * n];
                        for p in 0..k {
                            for j in 0..n {
                                t[j * k + p] = bd[p * n + j];
                            }
                        }
                        t
                    };
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.add_grad(*a, &da);
                }
                if self.node(*b).requires_grad {
                    // dB = A^T * dC
                    let at = {
                        let ad = &self.node(*a).data;
                        let mut t = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                t[p * m + i] = ad[i * k + p];
                            }
                        }
                        t
                    };
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.add_grad(*b, &db);
                }
            }

            Op::Add { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let da = reduce_grad(grad, out_shape, &sa);
                self.add_grad(*a, &da);
                let db = reduce_grad(grad, out_shape, &sb);
                self.add_grad(*b, &db);
            }

            Op::Mul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let pa = pad_shape(&sa, out_shape.len());
                let pb = pad_shape(&sb, out_shape.len());
                let mut ga = vec![0.0; grad.len()];
                let mut gb = vec![0.0; grad.len()];
                {
                    let da = &self.node(*a).data;
                    let db = &self.node(*b).data;
                    for_each_coord(out_shape, |coords, flat| {
                        ga[flat] = grad[flat] * db[broadcast_index(coords, &pb)];
                        gb[flat] = grad[flat] * da[broadcast_index(coords, &pa)];
                    });
                }
                let ra = reduce_grad(&ga, out_shape, &sa);
                self.add_grad(*a, &ra);
                let rb = reduce_grad(&gb, out_shape, &sb);
                self.add_grad(*b, &rb);
            }

            Op::Scale { a, c } => {
                let da: Vec<f64> = grad.iter().map(|g| g * c).collect();
                self.add_grad(*a, &da);
            }

            Op::Relu { a } => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.node(*a).data)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.add_grad(*a, &da);
            }

            Op::Gelu { a } => {
                let da: Vec<f64> = grad
                    .iter()
                    .zip(&self.node(*a).data)
                    .map(|(g, &x)| g * gelu_derivative(x))
                    .collect();
                self.add_grad(*a, &da);
            }

            Op::Softmax { a, axis } => {
                // ds_j = s_j * (g_j - sum_k g_k s_k) within each lane
                let s = &self.nodes[out_idx].data;
                let axis_len = out_shape[*axis];
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let mut da = vec![0.0; s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * axis_len * inner + j * inner + i;
                        let mut dot = 0.0;
                        for j in 0..axis_len {
                            dot += grad[at(j)] * s[at(j)];
                        }
                        for j in 0..axis_len {
                            da[at(j)] = s[at(j)] * (grad[at(j)] - dot);
                        }
                    }
                }
                self.add_grad(*a, &da);
            }

            Op::LayerNorm { x, gain, bias, eps } => {
                let d = *out_shape.last().unwrap();
                let rows = grad.len() / d;
                let xd = self.node(*x).data.clone();
                let gd = self.node(*gain).data.clone();
                let mut dx = vec![0.0; xd.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                        dxhat[j] = grow[j] * gd[j];
                    }
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    let df = d as f64;
                    for j in 0..d {
                        dx[r * d + j] =
                            inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gain, &dgain);
                self.add_grad(*bias, &dbias);
            }

            Op::CrossEntropy { logits, targets, active } => {
                let shape = self.shape(*logits).to_vec();
                let (rows, vocab) = (shape[0], shape[1]);
                let n_active = active.iter().filter(|&&a| a).count() as f64;
                let src = self.node(*logits).data.clone();
                let mut dl = vec![0.0; rows * vocab];
                let g = grad[0];
                for r in 0..rows {
                    if !active[r] {
                        continue;
                    }
                    let row = &src[r * vocab..(r + 1) * vocab];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for c in 0..vocab {
                        let p = exps[c] / sum;
                        let ind = if c == targets[r] { 1.0 } else { 0.0 };
                        dl[r * vocab + c] = g * (p - ind) / n_active;
                    }
                }
                self.add_grad(*logits, &dl);
            }

            Op::Sum { a } => {
                let da = vec![grad[0]; self.node(*a).data.len()];
                self.add_grad(*a, &da);
            }

            Op::MeanRows { a } => {
                let sa = self.shape(*a).to_vec();
                let (r, c) = (sa[0], sa[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = grad[j] / r as f64;
                    }
                }
                self.add_grad(*a, &da);
            }

            Op::Transpose { a } => {
                let (r, c) = (out_shape[0], out_shape[1]);
                let mut da = vec![0.0; grad.len()];
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = grad[i * c + j];
                    }
                }
                self.add_grad(*a, &da);
            }

            Op::Reshape { a } => {
                self.add_grad(*a, grad);
            }

            Op::ConcatRows { parts } => {
                let cols = out_shape[1];
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    let slice = grad[offset * cols..(offset + rows) * cols].to_vec();
                    self.add_grad(p, &slice);
                    offset += rows;
                }
            }

            Op::SliceRows { a, start } => {
                let sa = self.shape(*a).to_vec();
                let c = sa[1];
                let mut da = vec![0.0; sa[0] * c];
                da[start * c..start * c + grad.len()].copy_from_slice(grad);
                self.add_grad(*a, &da);
            }

            Op::SliceCols { a, start } => {
                let sa = self.shape(*a).to_vec();
                let (r, c) = (sa[0], sa[1]);
                let len = out_shape[1];
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + len]
                        .copy_from_slice(&grad[i * len..(i + 1) * len]);
                }
                self.add_grad(*a, &da);
            }

            Op::ConcatCols { parts } => {
                let rows = out_shape[0];
                let cols = out_shape[1];
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    let mut dp = vec![0.0; rows * pc];
                    for i in 0..rows {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&grad[i * cols + offset..i * cols + offset + pc]);
                    }
                    self.add_grad(p, &dp);
                    offset += pc;
                }
            }

            Op::Embed { table, indices } => {
                let d = self.shape(*table)[1];
                let v = self.shape(*table)[0];
                let mut dt = vec![0.0; v * d];
                for (pos, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += grad[pos * d + j];
                    }
                }
                self.add_grad(*table, &dt);
            }

            Op::WeightedPool { weights, values, axis } => {
                let vs = self.shape(*values).to_vec();
                let (r, c, d) = (vs[0], vs[1], vs[2]);
                let wd = self.node(*weights).data.clone();
                let vd = self.node(*values).data.clone();
                let mut dw = vec![0.0; r * c];
                let mut dv = vec![0.0; r * c * d];
                for i in 0..r {
                    for j in 0..c {
                        let out_row = if *axis == 0 { j } else { i };
                        let grow = &grad[out_row * d..(out_row + 1) * d];
                        let vrow = &vd[(i * c + j) * d..(i * c + j + 1) * d];
                        let mut dot = 0.0;
                        for k in 0..d {
                            dot += grow[k] * vrow[k];
                            dv[(i * c + j) * d + k] = wd[i * c + j] * grow[k];
                        }
                        dw[i * c + j] = dot;
                    }
                }
                self.add_grad(*weights, &dw);
                self.add_grad(*values, &dv);
            }
        }
    }
}

#[cfg(test)]
mod tests;
