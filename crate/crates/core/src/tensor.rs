//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations are methods on
//! [`Var`], a copyable handle into the tape; each call evaluates eagerly and
//! records enough to replay the chain rule. [`Tape::backward`] walks the record
//! in exact reverse order and returns a [`Gradients`] table.
//!
//! Only the operations the GNN layers and losses need are provided. Tensors are
//! row-major; most ops work on rank-2 `[rows, cols]` tensors, with rank-1
//! vectors for biases and rank-0 scalars for losses.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a rank-2 tensor (length for rank-1, 1 for scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count of a rank-2 tensor (1 otherwise).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Columns `start..end` of a matrix, as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || start > end || end > self.cols() {
            return Err(Error::shape("slice_cols", &self.shape, &[start, end]));
        }
        let rows = self.rows();
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Tensor::matrix(rows, width, data)
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::shape(op, &self.shape, &[]));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `c (+)= op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // Stored layouts: a is m x k (or k x m when transposed); likewise b.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe exactly the buffers whose lengths are
    // asserted at the top of this function, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScaleBy(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
    NeighborSum(usize, Rc<[(usize, usize)]>),
    SegmentSoftmax(usize, Rc<[usize]>, usize),
    MulConst(usize, Rc<[f64]>),
    ScaleRows(usize, Rc<[f64]>),
    CrossEntropy(usize, Rc<[usize]>),
    SqFrobeniusDiff(usize, usize),
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations. Inputs always precede outputs.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a trainable leaf; its gradient is populated by `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a constant input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::shape("backward", nodes[loss.id].value.shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, delta: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn map_like(t: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data,
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.rows(), av.cols());
            let n = bv.cols();
            if nodes[*a].requires_grad {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, &g.data, false, &bv.data, true, &mut da, false);
                accumulate(grads, nodes, *a, map_like(av, da));
            }
            if nodes[*b].requires_grad {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, &av.data, true, &g.data, false, &mut db, false);
                accumulate(grads, nodes, *b, map_like(bv, db));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let neg = g.data.iter().map(|x| -x).collect();
            accumulate(grads, nodes, *b, map_like(g, neg));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let da = g.data.iter().zip(&bv.data).map(|(g, b)| g * b).collect();
            let db = g.data.iter().zip(&av.data).map(|(g, a)| g * a).collect();
            accumulate(grads, nodes, *a, map_like(av, da));
            accumulate(grads, nodes, *b, map_like(bv, db));
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let cols = g.cols();
            let mut db = vec![0.0; cols];
            for row in g.data.chunks(cols) {
                for (d, x) in db.iter_mut().zip(row) {
                    *d += x;
                }
            }
            accumulate(grads, nodes, *b, map_like(&nodes[*b].value, db));
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (&nodes[*a].value, &nodes[*c].value);
            let cols = av.cols();
            let mut da = vec![0.0; av.numel()];
            let mut dc = vec![0.0; cv.numel()];
            for r in 0..av.rows() {
                let s = cv.data[r];
                for j in 0..cols {
                    let i = r * cols + j;
                    da[i] = g.data[i] * s;
                    dc[r] += g.data[i] * av.data[i];
                }
            }
            accumulate(grads, nodes, *a, map_like(av, da));
            accumulate(grads, nodes, *c, map_like(cv, dc));
        }
        Op::Scale(a, s) => {
            let da = g.data.iter().map(|x| x * s).collect();
            accumulate(grads, nodes, *a, map_like(g, da));
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::ScaleBy(a, s) => {
            let (av, sv) = (&nodes[*a].value, nodes[*s].value.item());
            let da = g.data.iter().map(|x| x * sv).collect();
            let ds: f64 = g.data.iter().zip(&av.data).map(|(g, a)| g * a).sum();
            accumulate(grads, nodes, *a, map_like(av, da));
            accumulate(grads, nodes, *s, map_like(&nodes[*s].value, vec![ds]));
        }
        Op::Relu(a) => {
            let av = &nodes[*a].value;
            let da = g
                .data
                .iter()
                .zip(&av.data)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, map_like(av, da));
        }
        Op::LeakyRelu(a, slope) => {
            let av = &nodes[*a].value;
            let da = g
                .data
                .iter()
                .zip(&av.data)
                .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                .collect();
            accumulate(grads, nodes, *a, map_like(av, da));
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                if nodes[p].requires_grad {
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g.data[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, nodes, p, map_like(&nodes[p].value, dp));
                }
                offset += w;
            }
        }
        Op::GatherRows(a, idx) => {
            let av = &nodes[*a].value;
            let cols = av.cols();
            let mut da = vec![0.0; av.numel()];
            for (e, &src) in idx.iter().enumerate() {
                for j in 0..cols {
                    da[src * cols + j] += g.data[e * cols + j];
                }
            }
            accumulate(grads, nodes, *a, map_like(av, da));
        }
        Op::ScatterAddRows(a, idx) => {
            let av = &nodes[*a].value;
            let cols = av.cols();
            let mut da = Vec::with_capacity(av.numel());
            for &dst in idx.iter() {
                da.extend_from_slice(&g.data[dst * cols..(dst + 1) * cols]);
            }
            accumulate(grads, nodes, *a, map_like(av, da));
        }
        Op::NeighborSum(a, edges) => {
            let da = neighbor_sum_raw(g, edges);
            accumulate(grads, nodes, *a, da);
        }
        Op::SegmentSoftmax(a, seg, num_segments) => {
            let cols = out.cols();
            let mut dot = vec![0.0; num_segments * cols];
            for (e, &s) in seg.iter().enumerate() {
                for j in 0..cols {
                    dot[s * cols + j] += g.data[e * cols + j] * out.data[e * cols + j];
                }
            }
            let mut da = vec![0.0; out.numel()];
            for (e, &s) in seg.iter().enumerate() {
                for j in 0..cols {
                    let i = e * cols + j;
                    da[i] = out.data[i] * (g.data[i] - dot[s * cols + j]);
                }
            }
            accumulate(grads, nodes, *a, map_like(out, da));
        }
        Op::MulConst(a, mask) => {
            let da = g.data.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
            accumulate(grads, nodes, *a, map_like(g, da));
        }
        Op::ScaleRows(a, scales) => {
            let cols = g.cols();
            let mut da = g.data.clone();
            for (r, row) in da.chunks_mut(cols).enumerate() {
                row.iter_mut().for_each(|x| *x *= scales[r]);
            }
            accumulate(grads, nodes, *a, map_like(g, da));
        }
        Op::CrossEntropy(a, labels) => {
            let av = &nodes[*a].value;
            let (n, c) = (av.rows(), av.cols());
            let scale = g.item() / n as f64;
            let mut da = vec![0.0; av.numel()];
            for r in 0..n {
                let p = softmax_row(av.row(r));
                for j in 0..c {
                    let target = if j == labels[r] { 1.0 } else { 0.0 };
                    da[r * c + j] = (p[j] - target) * scale;
                }
            }
            accumulate(grads, nodes, *a, map_like(av, da));
        }
        Op::SqFrobeniusDiff(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let s = 2.0 * g.item();
            let da: Vec<f64> = av.data.iter().zip(&bv.data).map(|(a, b)| s * (a - b)).collect();
            let db = da.iter().map(|x| -x).collect();
            accumulate(grads, nodes, *a, map_like(av, da));
            accumulate(grads, nodes, *b, map_like(bv, db));
        }
        Op::Sum(a) => {
            let av = &nodes[*a].value;
            accumulate(grads, nodes, *a, Tensor::full(av.shape(), g.item()));
        }
    }
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn neighbor_sum_raw(h: &Tensor, edges: &[(usize, usize)]) -> Tensor {
    let cols = h.cols();
    let mut out = vec![0.0; h.numel()];
    for &(u, v) in edges {
        for j in 0..cols {
            out[v * cols + j] += h.data[u * cols + j];
            out[u * cols + j] += h.data[v * cols + j];
        }
    }
    map_like(h, out)
}

fn check_indices(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(Error::Index { op, index, bound }),
        None => Ok(()),
    }
}

/// Gradient table produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of the right shape if nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let (a, b) = (self.value(), other.value());
            let (m, k) = a.require_matrix("matmul")?;
            let (k2, n) = b.require_matrix("matmul")?;
            if k != k2 {
                return Err(Error::shape("matmul", a.shape(), b.shape()));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a.data, false, &b.data, false, &mut c, false);
            Tensor::matrix(m, n, c)?
        };
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    fn zip_with(
        self,
        other: Var<'t>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op_name, a.shape(), b.shape()));
        }
        let data = a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
        Ok(map_like(&a, data))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip_with(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds a length-`cols` vector to every row of a matrix (bias add).
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias)?;
        let value = {
            let (a, b) = (self.value(), bias.value());
            let (_, cols) = a.require_matrix("add_row")?;
            if b.numel() != cols || b.shape().len() > 1 {
                return Err(Error::shape("add_row", a.shape(), b.shape()));
            }
            let mut data = a.data.clone();
            for row in data.chunks_mut(cols) {
                for (x, bb) in row.iter_mut().zip(&b.data) {
                    *x += bb;
                }
            }
            map_like(&a, data)
        };
        Ok(self.binary(bias, value, Op::AddRow(self.id, bias.id)))
    }

    /// Multiplies row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(col)?;
        let value = {
            let (a, c) = (self.value(), col.value());
            let (rows, cols) = a.require_matrix("mul_col")?;
            if c.shape() != [rows, 1] {
                return Err(Error::shape("mul_col", a.shape(), c.shape()));
            }
            let mut data = a.data.clone();
            for (r, row) in data.chunks_mut(cols.max(1)).enumerate() {
                row.iter_mut().for_each(|x| *x *= c.data[r]);
            }
            map_like(&a, data)
        };
        Ok(self.binary(col, value, Op::MulCol(self.id, col.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let value = {
            let a = self.value();
            map_like(&a, a.data.iter().map(|x| x * s).collect())
        };
        self.unary(value, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let value = {
            let a = self.value();
            map_like(&a, a.data.iter().map(|x| x + s).collect())
        };
        self.unary(value, Op::AddScalar(self.id))
    }

    /// Multiplies every entry by a single-element tensor `s`.
    pub fn scale_by(self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(s)?;
        let value = {
            let (a, sv) = (self.value(), s.value());
            if sv.numel() != 1 {
                return Err(Error::shape("scale_by", a.shape(), sv.shape()));
            }
            let k = sv.item();
            map_like(&a, a.data.iter().map(|x| x * k).collect())
        };
        Ok(self.binary(s, value, Op::ScaleBy(self.id, s.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let value = {
            let a = self.value();
            map_like(&a, a.data.iter().map(|x| x.max(0.0)).collect())
        };
        self.unary(value, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let value = {
            let a = self.value();
            map_like(
                &a,
                a.data
                    .iter()
                    .map(|&x| if x > 0.0 { x } else { slope * x })
                    .collect(),
            )
        };
        self.unary(value, Op::LeakyRelu(self.id, slope))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        for p in parts {
            first.same_tape(*p)?;
        }
        let value = {
            let vals: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].require_matrix("concat_cols")?.0;
            for v in &vals {
                let (r, _) = v.require_matrix("concat_cols")?;
                if r != rows {
                    return Err(Error::shape("concat_cols", vals[0].shape(), v.shape()));
                }
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = first.tape.needs(&ids);
        Ok(first.tape.push(value, Op::ConcatCols(ids), rg))
    }

    /// Output row `e` is input row `idx[e]`.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, cols) = a.require_matrix("gather_rows")?;
            check_indices("gather_rows", &idx, rows)?;
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx.iter() {
                data.extend_from_slice(a.row(i));
            }
            Tensor::matrix(idx.len(), cols, data)?
        };
        Ok(self.unary(value, Op::GatherRows(self.id, idx)))
    }

    /// Output row `s` is the sum of input rows `e` with `idx[e] == s`.
    pub fn scatter_add_rows(self, idx: Rc<[usize]>, num_rows: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, cols) = a.require_matrix("scatter_add_rows")?;
            if idx.len() != rows {
                return Err(Error::shape("scatter_add_rows", a.shape(), &[idx.len()]));
            }
            check_indices("scatter_add_rows", &idx, num_rows)?;
            let mut data = vec![0.0; num_rows * cols];
            for (e, &dst) in idx.iter().enumerate() {
                for j in 0..cols {
                    data[dst * cols + j] += a.data[e * cols + j];
                }
            }
            Tensor::matrix(num_rows, cols, data)?
        };
        Ok(self.unary(value, Op::ScatterAddRows(self.id, idx)))
    }

    /// Row `v` of the output is the sum of rows `u` over undirected neighbors of `v`.
    /// Each undirected edge is listed once; both directions are aggregated.
    pub fn segment_sum(self, edges: Rc<[(usize, usize)]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, _) = a.require_matrix("segment_sum")?;
            for &(u, v) in edges.iter() {
                check_indices("segment_sum", &[u, v], rows)?;
            }
            neighbor_sum_raw(&a, &edges)
        };
        Ok(self.unary(value, Op::NeighborSum(self.id, edges)))
    }

    /// Column-wise softmax over rows sharing a segment id.
    pub fn softmax_over_segments(self, segments: Rc<[usize]>, num_segments: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, cols) = a.require_matrix("softmax_over_segments")?;
            if segments.len() != rows {
                return Err(Error::shape("softmax_over_segments", a.shape(), &[segments.len()]));
            }
            check_indices("softmax_over_segments", &segments, num_segments)?;
            let mut max = vec![f64::NEG_INFINITY; num_segments * cols];
            for (e, &s) in segments.iter().enumerate() {
                for j in 0..cols {
                    let m = &mut max[s * cols + j];
                    *m = m.max(a.data[e * cols + j]);
                }
            }
            let mut data = vec![0.0; rows * cols];
            let mut z = vec![0.0; num_segments * cols];
            for (e, &s) in segments.iter().enumerate() {
                for j in 0..cols {
                    let x = (a.data[e * cols + j] - max[s * cols + j]).exp();
                    data[e * cols + j] = x;
                    z[s * cols + j] += x;
                }
            }
            for (e, &s) in segments.iter().enumerate() {
                for j in 0..cols {
                    data[e * cols + j] /= z[s * cols + j];
                }
            }
            map_like(&a, data)
        };
        Ok(self.unary(value, Op::SegmentSoftmax(self.id, segments, num_segments)))
    }

    /// Per-graph sum of node rows; `membership[v]` is the graph index of node `v`.
    pub fn sum_pool(self, membership: Rc<[usize]>, num_graphs: usize) -> Result<Var<'t>> {
        self.scatter_add_rows(membership, num_graphs)
    }

    /// Per-graph mean of node rows. Empty graphs pool to zero.
    pub fn mean_pool(self, membership: Rc<[usize]>, num_graphs: usize) -> Result<Var<'t>> {
        let mut counts = vec![0usize; num_graphs];
        for &g in membership.iter() {
            if g < num_graphs {
                counts[g] += 1;
            }
        }
        let scales: Rc<[f64]> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        self.sum_pool(membership, num_graphs)?.scale_rows(scales)
    }

    pub fn scale_rows(self, scales: Rc<[f64]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, cols) = a.require_matrix("scale_rows")?;
            if scales.len() != rows {
                return Err(Error::shape("scale_rows", a.shape(), &[scales.len()]));
            }
            let mut data = a.data.clone();
            for (r, row) in data.chunks_mut(cols.max(1)).enumerate() {
                row.iter_mut().for_each(|x| *x *= scales[r]);
            }
            map_like(&a, data)
        };
        Ok(self.unary(value, Op::ScaleRows(self.id, scales)))
    }

    /// Elementwise product with a constant buffer (no gradient into the buffer).
    pub fn mul_const(self, factors: Rc<[f64]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if factors.len() != a.numel() {
                return Err(Error::shape("mul_const", a.shape(), &[factors.len()]));
            }
            map_like(&a, a.data.iter().zip(factors.iter()).map(|(x, m)| x * m).collect())
        };
        Ok(self.unary(value, Op::MulConst(self.id, factors)))
    }

    /// Inverted dropout. With `train == false` or `rate == 0` this is the identity.
    pub fn dropout<R: rand::Rng + ?Sized>(self, rate: f64, train: bool, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(self);
        }
        let keep = 1.0 - rate;
        let n = self.value().numel();
        let mask: Rc<[f64]> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mul_const(mask)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of the logits.
    pub fn cross_entropy(self, labels: Rc<[usize]>) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let (rows, cols) = a.require_matrix("cross_entropy")?;
            if labels.len() != rows {
                return Err(Error::shape("cross_entropy", a.shape(), &[labels.len()]));
            }
            if rows == 0 {
                return Err(Error::Contract("cross_entropy over zero rows".into()));
            }
            check_indices("cross_entropy", &labels, cols)?;
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let row = a.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                total += lse - row[y];
            }
            Tensor::scalar(total / rows as f64)
        };
        Ok(self.unary(value, Op::CrossEntropy(self.id, labels)))
    }

    /// `sum((a - b)^2)` as a scalar.
    pub fn sq_frobenius_diff(self, other: Var<'t>) -> Result<Var<'t>> {
        let diff = self.zip_with(other, "sq_frobenius_diff", |a, b| a - b)?;
        let s: f64 = diff.data.iter().map(|d| d * d).sum();
        Ok(self.binary(other, Tensor::scalar(s), Op::SqFrobeniusDiff(self.id, other.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data.iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }
}
