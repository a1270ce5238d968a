use std::collections::HashMap;

use crate::matrix::{gemm, Matrix};
use crate::params::{ParamId, ParamStore};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    LayerNorm { x: Var, xhat: Matrix, inv_std: Vec<f64> },
    Normalize { x: Var, norms: Vec<f64> },
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    RowSums(Var),
    Transpose(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records a computation over [`Matrix`] values for reverse-mode
/// differentiation. A tape is built per forward pass and discarded after
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by [`Tape::backward`]. Parameters that were
/// not reached (or only reached through detached paths) have no entry.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    grads: HashMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.grads.iter()
    }

    /// Add `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.grads.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    /// Global L2 norm over all entries, summed in parameter-id order.
    pub fn norm(&self) -> f64 {
        let mut ids: Vec<_> = self.grads.keys().copied().collect();
        ids.sort();
        ids.iter().map(|id| self.grads[id].data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }
}

fn ensure_same(a: &Matrix, b: &Matrix, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Whether gradients can flow back through `v` to some parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf bound to a stored parameter. Repeated calls for the
    /// same id reuse one node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.param_nodes.insert(id, v);
        v
    }

    /// Copy of `x` cut off from the graph (stop-gradient).
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        ensure_same(self.value(a), self.value(b), "add");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        ensure_same(self.value(a), self.value(b), "sub");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        ensure_same(self.value(a), self.value(b), "mul");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1 x c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, r) = (self.value(x), self.value(row));
        assert_eq!(r.shape(), (1, xm.cols()), "add_row: row shape {:?} vs {:?}", r.shape(), xm.shape());
        let mut value = xm.clone();
        for i in 0..value.rows() {
            for (a, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *a += b;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(value, Op::AddRow(x, row), rg)
    }

    /// Multiplies every row of `x` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xm, r) = (self.value(x), self.value(row));
        assert_eq!(r.shape(), (1, xm.cols()), "mul_row: row shape {:?} vs {:?}", r.shape(), xm.shape());
        let mut value = xm.clone();
        for i in 0..value.rows() {
            for (a, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *a *= b;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(value, Op::MulRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 0.5 * v * (1.0 + (GELU_K * (v + GELU_C * v * v * v)).tanh()));
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        let rg = self.rg(&[x]);
        self.push(value, Op::Log(x), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let lse = logsumexp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSoftmax(x), rg)
    }

    /// Row-wise log-sum-exp, `n x c -> n x 1`.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let data = (0..xm.rows()).map(|i| logsumexp(xm.row(i))).collect();
        let value = Matrix::from_vec(xm.rows(), 1, data);
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSumExp(x), rg)
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xm = self.value(x);
        let (n, c) = xm.shape();
        let mut xhat = Matrix::zeros(n, c);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(&[x]);
        self.push(xhat.clone(), Op::LayerNorm { x, xhat, inv_std }, rg)
    }

    /// Scales each row to unit L2 norm. Rows with norm below `1e-12` are
    /// divided by `1e-12` instead.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xm = self.value(x);
        let mut value = xm.clone();
        let mut norms = Vec::with_capacity(xm.rows());
        for i in 0..xm.rows() {
            let nrm = xm.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in value.row_mut(i) {
                *v /= nrm;
            }
            norms.push(nrm);
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::Normalize { x, norms }, rg)
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xm = self.value(x);
        let mut value = Matrix::zeros(idx.len(), xm.cols());
        for (o, &i) in idx.iter().enumerate() {
            assert!(i < xm.rows(), "gather_rows: index {i} out of {} rows", xm.rows());
            value.row_mut(o).copy_from_slice(xm.row(i));
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::Gather(x, idx.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(m.data());
        }
        let rg = self.rg(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows(), rows, "concat_cols: row mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xm = self.value(x);
        assert!(start <= end && end <= xm.cols(), "slice_cols out of range");
        let mut value = Matrix::zeros(xm.rows(), end - start);
        for i in 0..xm.rows() {
            value.row_mut(i).copy_from_slice(&xm.row(i)[start..end]);
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::SliceCols(x, start), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        assert!(!m.is_empty(), "mean of empty matrix");
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        let rg = self.rg(&[x]);
        self.push(value, Op::MeanAll(x), rg)
    }

    /// Column sums, `n x c -> 1 x c`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let mut out = vec![0.0; m.cols()];
        for i in 0..m.rows() {
            for (o, v) in out.iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        let value = Matrix::from_vec(1, m.cols(), out);
        let rg = self.rg(&[x]);
        self.push(value, Op::SumRows(x), rg)
    }

    /// Row sums, `n x c -> n x 1`.
    pub fn row_sums(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let data = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let value = Matrix::from_vec(m.rows(), 1, data);
        let rg = self.rg(&[x]);
        self.push(value, Op::RowSums(x), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.push(value, Op::Transpose(x), rg)
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.nodes[output.0].requires_grad {
            return out;
        }
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let send = |v: Var, d: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.grads.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        send(*a, gemm(&g, false, self.value(*b), true), &mut grads);
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, gemm(self.value(*a), true, &g, false), &mut grads);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        send(*a, gemm(&g, false, self.value(*b), false), &mut grads);
                    }
                    if self.nodes[b.0].requires_grad {
                        send(*b, gemm(&g, true, self.value(*a), false), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.map(|v| -v), &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    send(*a, ga, &mut grads);
                    send(*b, gb, &mut grads);
                }
                Op::AddRow(x, row) => {
                    let gr = column_sums(&g);
                    send(*x, g, &mut grads);
                    send(*row, gr, &mut grads);
                }
                Op::MulRow(x, row) => {
                    let r = self.value(*row);
                    let xm = self.value(*x);
                    let mut gx = g.clone();
                    let mut gr = vec![0.0; r.cols()];
                    for i in 0..g.rows() {
                        for c in 0..g.cols() {
                            gx.set(i, c, g.get(i, c) * r.get(0, c));
                            gr[c] += g.get(i, c) * xm.get(i, c);
                        }
                    }
                    send(*x, gx, &mut grads);
                    send(*row, Matrix::from_vec(1, r.cols(), gr), &mut grads);
                }
                Op::Transpose(x) => {
                    send(*x, g.transpose(), &mut grads);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    send(*x, g.map(|v| v * s), &mut grads);
                }
                Op::Gelu(x) => {
                    let d = self.value(*x).map(|v| {
                        let t = (GELU_K * (v + GELU_C * v * v * v)).tanh();
                        0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * v * v)
                    });
                    send(*x, g.zip_map(&d, |a, b| a * b), &mut grads);
                }
                Op::Exp(x) => {
                    send(*x, g.zip_map(&node.value, |a, y| a * y), &mut grads);
                }
                Op::Log(x) => {
                    send(*x, g.zip_map(self.value(*x), |a, v| a / v), &mut grads);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            gx.set(i, c, y.get(i, c) * (g.get(i, c) - dot));
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let gs: f64 = g.row(i).iter().sum();
                        for c in 0..y.cols() {
                            gx.set(i, c, g.get(i, c) - y.get(i, c).exp() * gs);
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::LogSumExp(x) => {
                    let xm = self.value(*x);
                    let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                    for i in 0..xm.rows() {
                        let lse = node.value.get(i, 0);
                        let gi = g.get(i, 0);
                        for c in 0..xm.cols() {
                            gx.set(i, c, gi * (xm.get(i, c) - lse).exp());
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let (n, c) = xhat.shape();
                    let mut gx = Matrix::zeros(n, c);
                    for i in 0..n {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for k in 0..c {
                            gx.set(i, k, inv_std[i] * (gr[k] - mg - xr[k] * mgx));
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::Normalize { x, norms } => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            gx.set(i, c, (g.get(i, c) - y.get(i, c) * dot) / norms[i]);
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::Gather(x, idx) => {
                    let xm = self.value(*x);
                    let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                    for (o, &i) in idx.iter().enumerate() {
                        for (a, b) in gx.row_mut(i).iter_mut().zip(g.row(o)) {
                            *a += b;
                        }
                    }
                    send(*x, gx, &mut grads);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut off = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        let d = Matrix::from_vec(r, cols, g.data()[off * cols..(off + r) * cols].to_vec());
                        send(*p, d, &mut grads);
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let c = self.value(*p).cols();
                        let mut d = Matrix::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        send(*p, d, &mut grads);
                        off += c;
                    }
                }
                Op::SliceCols(x, start) => {
                    let xm = self.value(*x);
                    let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                    for i in 0..g.rows() {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    send(*x, gx, &mut grads);
                }
                Op::SumAll(x) => {
                    let (r, c) = self.shape(*x);
                    send(*x, Matrix::filled(r, c, g.item()), &mut grads);
                }
                Op::MeanAll(x) => {
                    let (r, c) = self.shape(*x);
                    send(*x, Matrix::filled(r, c, g.item() / (r * c) as f64), &mut grads);
                }
                Op::SumRows(x) => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        gx.row_mut(i).copy_from_slice(g.row(0));
                    }
                    send(*x, gx, &mut grads);
                }
                Op::RowSums(x) => {
                    let (r, c) = self.shape(*x);
                    let mut gx = Matrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    send(*x, gx, &mut grads);
                }
            }
        }
        out
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Matrix::from_vec(1, g.cols(), out)
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}
