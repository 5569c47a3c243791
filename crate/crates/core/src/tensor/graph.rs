use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Index, Result, Tensor, TensorError};

/// Primitive recorded on the tape, holding parent ids plus whatever the
/// backward rule needs from the forward pass.
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Relu(usize),
    Ln(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LayerNormRows {
        x: usize,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Index),
    SegmentSum(usize, Index),
    SegmentMean {
        x: usize,
        seg: Index,
        counts: Vec<usize>,
    },
    SegmentMax {
        x: usize,
        argmax: Vec<usize>,
    },
    SegmentSoftmax(usize, Index),
    RowDot(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    SliceCols(usize, usize),
    Reshape(usize),
    Powf(usize, f64),
    SmoothL1(usize),
    LogSoftmaxRows(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Variables are indices into it; the tape is append-only, so
/// node ids are already in topological order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
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

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, usize>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .get(name)
            .and_then(|&id| self.grads.get(id))
            .and_then(Option::as_ref)
    }

    /// Gradients of every parameter bound into the graph, by name.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(name, &id)| self.grads[id].as_ref().map(|g| (name.as_str(), g)))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .map_err(|_| invalid(op, format!("expected rank-2 operand, got {:?}", t.shape())))
}

/// `c = alpha * a * b + beta * c` where operands may be transposed views.
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
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Row/column strides for the logical (m×k) and (k×n) views.
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
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

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a named parameter, reusing the existing leaf when the name was
    /// already bound in this graph.
    pub fn bind_param(&self, name: &str, value: &Tensor) -> Var<'_> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Var { graph: self, id };
        }
        let v = self.input(value.clone());
        self.params.borrow_mut().insert(name.to_string(), v.id);
        v
    }

    /// Names of parameters bound so far.
    pub fn bound_params(&self) -> Vec<String> {
        let mut names: Vec<String> = self.params.borrow().keys().cloned().collect();
        names.sort();
        names
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_val = &nodes[output.id].value;
        if out_val.len() != 1 {
            return Err(invalid(
                "backward",
                format!("output must be scalar, got shape {:?}", out_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::full(out_val.shape(), 1.0));

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[id].value.shape()));
    }
    f(slot.as_mut().expect("initialized above").data_mut());
}

fn backprop(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k) = (av.rows(), av.cols());
            let n = bv.cols();
            accumulate(nodes, grads, *a, |da| {
                gemm(m, n, k, gd, false, bv.data(), true, da, 1.0)
            });
            accumulate(nodes, grads, *b, |db| {
                gemm(k, m, n, av.data(), true, gd, false, db, 1.0)
            });
        }
        Op::Add(a, b) => {
            for p in [*a, *b] {
                accumulate(nodes, grads, p, |d| {
                    d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
                });
            }
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            });
            accumulate(nodes, grads, *b, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d -= g)
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += gd[i] * bv.data()[i];
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for i in 0..d.len() {
                    d[i] += gd[i] * av.data()[i];
                }
            });
        }
        Op::AddRow(a, b) => {
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            });
            accumulate(nodes, grads, *b, |d| {
                for row in gd.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            });
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (&nodes[*a].value, &nodes[*c].value);
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                for (i, row) in d.chunks_mut(n).enumerate() {
                    let s = cv.data()[i];
                    row.iter_mut()
                        .zip(&gd[i * n..])
                        .for_each(|(d, g)| *d += g * s);
                }
            });
            accumulate(nodes, grads, *c, |d| {
                for (i, di) in d.iter_mut().enumerate() {
                    let gr = &gd[i * n..(i + 1) * n];
                    let ar = av.row_slice(i);
                    *di += gr.iter().zip(ar).map(|(g, a)| g * a).sum::<f64>();
                }
            });
        }
        Op::MulRow(a, r) => {
            let (av, rv) = (&nodes[*a].value, &nodes[*r].value);
            let n = y.cols().max(1);
            accumulate(nodes, grads, *a, |d| {
                for (row, grow) in d.chunks_mut(n).zip(gd.chunks(n)) {
                    for j in 0..row.len() {
                        row[j] += grow[j] * rv.data()[j];
                    }
                }
            });
            accumulate(nodes, grads, *r, |d| {
                for (arow, grow) in av.data().chunks(n).zip(gd.chunks(n)) {
                    for j in 0..d.len() {
                        d[j] += grow[j] * arow[j];
                    }
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d += g * s)
            });
        }
        Op::AddScalar(a) => {
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            });
        }
        Op::Sigmoid(a) => {
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    let s = y.data()[i];
                    d[i] += gd[i] * s * (1.0 - s);
                }
            });
        }
        Op::Relu(a) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    if av.data()[i] > 0.0 {
                        d[i] += gd[i];
                    }
                }
            });
        }
        Op::Ln(a) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += gd[i] / av.data()[i];
                }
            });
        }
        Op::Clamp(a, lo, hi) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    let x = av.data()[i];
                    if x >= *lo && x <= *hi {
                        d[i] += gd[i];
                    }
                }
            });
        }
        Op::SoftmaxRows(a) => {
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                for (i, row) in d.chunks_mut(n).enumerate() {
                    let yr = y.row_slice(i);
                    let gr = &gd[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        row[j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNormRows { x, inv_std } => {
            let n = y.cols();
            accumulate(nodes, grads, *x, |d| {
                for (i, row) in d.chunks_mut(n).enumerate() {
                    let xh = y.row_slice(i);
                    let gr = &gd[i * n..(i + 1) * n];
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gx = gr.iter().zip(xh).map(|(g, x)| g * x).sum::<f64>() / n as f64;
                    for j in 0..n {
                        row[j] += inv_std[i] * (gr[j] - mean_g - xh[j] * mean_gx);
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let n = y.cols();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                accumulate(nodes, grads, p, |d| {
                    for (i, row) in d.chunks_mut(pc.max(1)).enumerate() {
                        let src = &gd[i * n + offset..i * n + offset + pc];
                        row.iter_mut().zip(src).for_each(|(d, g)| *d += g);
                    }
                });
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                accumulate(nodes, grads, p, |d| {
                    d.iter_mut()
                        .zip(&gd[offset..offset + len])
                        .for_each(|(d, g)| *d += g);
                });
                offset += len;
            }
        }
        Op::GatherRows(a, idx) => {
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                for (r, &src) in idx.iter().enumerate() {
                    let dst = &mut d[src * n..(src + 1) * n];
                    dst.iter_mut()
                        .zip(&gd[r * n..(r + 1) * n])
                        .for_each(|(d, g)| *d += g);
                }
            });
        }
        Op::SegmentSum(a, seg) => {
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                for (r, &s) in seg.iter().enumerate() {
                    let dst = &mut d[r * n..(r + 1) * n];
                    dst.iter_mut()
                        .zip(&gd[s * n..(s + 1) * n])
                        .for_each(|(d, g)| *d += g);
                }
            });
        }
        Op::SegmentMean { x, seg, counts } => {
            let n = y.cols();
            accumulate(nodes, grads, *x, |d| {
                for (r, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    let dst = &mut d[r * n..(r + 1) * n];
                    dst.iter_mut()
                        .zip(&gd[s * n..(s + 1) * n])
                        .for_each(|(d, g)| *d += g * inv);
                }
            });
        }
        Op::SegmentMax { x, argmax } => {
            let n = y.cols();
            accumulate(nodes, grads, *x, |d| {
                for (k, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        d[src * n + k % n] += gd[k];
                    }
                }
            });
        }
        Op::SegmentSoftmax(a, seg) => {
            let n = y.cols();
            let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
            let mut dots = vec![0.0; segments * n];
            for (r, &s) in seg.iter().enumerate() {
                for j in 0..n {
                    dots[s * n + j] += gd[r * n + j] * y.data()[r * n + j];
                }
            }
            accumulate(nodes, grads, *a, |d| {
                for (r, &s) in seg.iter().enumerate() {
                    for j in 0..n {
                        let k = r * n + j;
                        d[k] += y.data()[k] * (gd[k] - dots[s * n + j]);
                    }
                }
            });
        }
        Op::RowDot(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let n = av.cols();
            accumulate(nodes, grads, *a, |d| {
                for (i, row) in d.chunks_mut(n.max(1)).enumerate() {
                    row.iter_mut()
                        .zip(bv.row_slice(i))
                        .for_each(|(d, b)| *d += gd[i] * b);
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for (i, row) in d.chunks_mut(n.max(1)).enumerate() {
                    row.iter_mut()
                        .zip(av.row_slice(i))
                        .for_each(|(d, a)| *d += gd[i] * a);
                }
            });
        }
        Op::Transpose(a) => {
            let (r, c) = (y.rows(), y.cols());
            accumulate(nodes, grads, *a, |d| {
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] += gd[i * c + j];
                    }
                }
            });
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, |d| d.iter_mut().for_each(|d| *d += gd[0]));
        }
        Op::Mean(a) => {
            let len = nodes[*a].value.len().max(1) as f64;
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().for_each(|d| *d += gd[0] / len)
            });
        }
        Op::SliceCols(a, start) => {
            let n = y.cols();
            let src_cols = nodes[*a].value.cols();
            accumulate(nodes, grads, *a, |d| {
                for i in 0..y.rows() {
                    for j in 0..n {
                        d[i * src_cols + start + j] += gd[i * n + j];
                    }
                }
            });
        }
        Op::Reshape(a) => {
            accumulate(nodes, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(d, g)| *d += g)
            });
        }
        Op::Powf(a, p) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    let x = av.data()[i];
                    if x != 0.0 || *p >= 1.0 {
                        d[i] += gd[i] * p * x.powf(p - 1.0);
                    }
                }
            });
        }
        Op::SmoothL1(a) => {
            let av = &nodes[*a].value;
            accumulate(nodes, grads, *a, |d| {
                for i in 0..d.len() {
                    let x = av.data()[i];
                    d[i] += gd[i] * if x.abs() < 1.0 { x } else { x.signum() };
                }
            });
        }
        Op::LogSoftmaxRows(a) => {
            let n = y.cols();
            accumulate(nodes, grads, *a, |d| {
                for (i, row) in d.chunks_mut(n.max(1)).enumerate() {
                    let gr = &gd[i * n..(i + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        row[j] += gr[j] - y.data()[i * n + j].exp() * gsum;
                    }
                }
            });
        }
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// Snapshot of the forward value.
    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        let ng = self.graph.needs(self.id);
        self.graph.push(value, op, ng)
    }

    fn binary(&self, other: &Var<'g>, value: Tensor, op: Op) -> Var<'g> {
        let ng = self.graph.needs(self.id) || self.graph.needs(other.id);
        self.graph.push(value, op, ng)
    }

    fn zip_same(
        &self,
        other: &Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(name, &a, &b));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    /// Matrix product of `m×k` and `k×n`.
    pub fn matmul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = dims("matmul", &a)?;
        let (k2, n) = dims("matmul", &b)?;
        if k != k2 {
            return Err(mismatch("matmul", &a, &b));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
        Ok(self.binary(
            other,
            Tensor::matrix(m, n, out),
            Op::MatMul(self.id, other.id),
        ))
    }

    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let t = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(self.binary(other, t, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let t = self.zip_same(other, "sub", |a, b| a - b)?;
        Ok(self.binary(other, t, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let t = self.zip_same(other, "mul", |a, b| a * b)?;
        Ok(self.binary(other, t, Op::Mul(self.id, other.id)))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&self, row: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), row.value());
        let (_, n) = dims("add_row", &a)?;
        if b.shape() != [1, n] {
            return Err(mismatch("add_row", &a, &b));
        }
        let mut data = a.data().to_vec();
        for r in data.chunks_mut(n.max(1)) {
            r.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        Ok(self.binary(
            row,
            Tensor::new(a.shape().to_vec(), data)?,
            Op::AddRow(self.id, row.id),
        ))
    }

    /// Scales row `i` of an `m×n` matrix by entry `i` of an `m×1` column.
    pub fn mul_col(&self, col: &Var<'g>) -> Result<Var<'g>> {
        let (a, c) = (self.value(), col.value());
        let (m, n) = dims("mul_col", &a)?;
        if c.shape() != [m, 1] {
            return Err(mismatch("mul_col", &a, &c));
        }
        let mut data = a.data().to_vec();
        for (i, r) in data.chunks_mut(n.max(1)).enumerate().take(m) {
            r.iter_mut().for_each(|x| *x *= c.data()[i]);
        }
        Ok(self.binary(
            col,
            Tensor::new(a.shape().to_vec(), data)?,
            Op::MulCol(self.id, col.id),
        ))
    }

    /// Scales column `j` of an `m×n` matrix by entry `j` of a `1×n` row.
    pub fn mul_row(&self, row: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), row.value());
        let (_, n) = dims("mul_row", &a)?;
        if b.shape() != [1, n] {
            return Err(mismatch("mul_row", &a, &b));
        }
        let mut data = a.data().to_vec();
        for r in data.chunks_mut(n.max(1)) {
            r.iter_mut().zip(b.data()).for_each(|(x, y)| *x *= y);
        }
        Ok(self.binary(
            row,
            Tensor::new(a.shape().to_vec(), data)?,
            Op::MulRow(self.id, row.id),
        ))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let a = self.value();
        Tensor {
            shape: a.shape().to_vec(),
            data: a.data().iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Var<'g> {
        self.unary(self.map(|x| x * s), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'g> {
        self.unary(self.map(|x| x + s), Op::AddScalar(self.id))
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(self.map(sigmoid), Op::Sigmoid(self.id))
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(self.map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&self) -> Result<Var<'g>> {
        let a = self.value();
        if let Some(i) = a.data().iter().position(|x| *x <= 0.0) {
            return Err(invalid(
                "ln",
                format!("non-positive input at coordinate {i}"),
            ));
        }
        Ok(self.unary(self.map(f64::ln), Op::Ln(self.id)))
    }

    /// `x^p` for non-negative `x`.
    pub fn powf(&self, p: f64) -> Result<Var<'g>> {
        let a = self.value();
        if let Some(i) = a.data().iter().position(|x| *x < 0.0) {
            return Err(invalid("powf", format!("negative base at coordinate {i}")));
        }
        Ok(self.unary(self.map(|x| x.powf(p)), Op::Powf(self.id, p)))
    }

    /// Elementwise Huber-style smooth L1 with unit transition point.
    pub fn smooth_l1(&self) -> Var<'g> {
        let f = |d: f64| {
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        };
        self.unary(self.map(f), Op::SmoothL1(self.id))
    }

    /// Numerically stable `ln(softmax(x))` along each row.
    pub fn log_softmax_rows(&self) -> Result<Var<'g>> {
        let a = self.value();
        let (_, n) = dims("log_softmax_rows", &a)?;
        let mut data = a.data().to_vec();
        for r in data.chunks_mut(n.max(1)) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            r.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.unary(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::LogSoftmaxRows(self.id),
        ))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(self.map(|x| x.clamp(lo, hi)), Op::Clamp(self.id, lo, hi))
    }

    /// Softmax along each row.
    pub fn softmax_rows(&self) -> Result<Var<'g>> {
        let a = self.value();
        let (_, n) = dims("softmax_rows", &a)?;
        let mut data = a.data().to_vec();
        for r in data.chunks_mut(n.max(1)) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in r.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            r.iter_mut().for_each(|x| *x /= s);
        }
        Ok(self.unary(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::SoftmaxRows(self.id),
        ))
    }

    /// Per-row standardization to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&self, eps: f64) -> Result<Var<'g>> {
        let a = self.value();
        let (m, n) = dims("layer_norm_rows", &a)?;
        if n == 0 {
            return Err(invalid("layer_norm_rows", "zero-width rows"));
        }
        let mut data = a.data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for r in data.chunks_mut(n) {
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            r.iter_mut().for_each(|x| *x = (*x - mean) * is);
            inv_std.push(is);
        }
        Ok(self.unary(
            Tensor::new(a.shape().to_vec(), data)?,
            Op::LayerNormRows {
                x: self.id,
                inv_std,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Var<'g>> {
        let a = self.value();
        let (r, c) = dims("transpose", &a)?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        Ok(self.unary(Tensor::matrix(c, r, data), Op::Transpose(self.id)))
    }

    pub fn sum(&self) -> Var<'g> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean of all entries; the mean of an empty tensor is 0.
    pub fn mean(&self) -> Var<'g> {
        let a = self.value();
        let m = if a.is_empty() {
            0.0
        } else {
            a.data().iter().sum::<f64>() / a.len() as f64
        };
        self.unary(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'g>> {
        let a = self.value();
        let (m, n) = dims("slice_cols", &a)?;
        if start + len > n {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{} exceeds {n} columns", start + len),
            ));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&a.data()[i * n + start..i * n + start + len]);
        }
        Ok(self.unary(Tensor::matrix(m, len, data), Op::SliceCols(self.id, start)))
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'g>> {
        let a = self.value();
        if rows * cols != a.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        Ok(self.unary(
            Tensor::matrix(rows, cols, a.data().to_vec()),
            Op::Reshape(self.id),
        ))
    }

    /// Row `i` of the output is input row `idx[i]`.
    pub fn gather_rows(&self, idx: Index) -> Result<Var<'g>> {
        let a = self.value();
        let (m, n) = dims("gather_rows", &a)?;
        if let Some(bad) = idx.iter().find(|&&i| i >= m) {
            return Err(invalid(
                "gather_rows",
                format!("row index {bad} out of range for {m} rows"),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            data.extend_from_slice(&a.data()[i * n..(i + 1) * n]);
        }
        Ok(self.unary(
            Tensor::matrix(idx.len(), n, data),
            Op::GatherRows(self.id, idx),
        ))
    }

    fn check_segments(
        &self,
        op: &'static str,
        seg: &[usize],
        segments: usize,
    ) -> Result<(usize, usize)> {
        let a = self.value();
        let (m, n) = dims(op, &a)?;
        if seg.len() != m {
            return Err(invalid(
                op,
                format!("{} segment ids for {m} rows", seg.len()),
            ));
        }
        if let Some(bad) = seg.iter().find(|&&s| s >= segments) {
            return Err(invalid(
                op,
                format!("segment id {bad} out of range for {segments} segments"),
            ));
        }
        Ok((m, n))
    }

    /// Row-wise scatter-add: output row `s` is the sum of input rows with
    /// `seg[r] == s`. Empty segments are zero.
    pub fn segment_sum(&self, seg: Index, segments: usize) -> Result<Var<'g>> {
        let (_, n) = self.check_segments("segment_sum", &seg, segments)?;
        let a = self.value();
        let mut data = vec![0.0; segments * n];
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                data[s * n + j] += a.data()[r * n + j];
            }
        }
        Ok(self.unary(
            Tensor::matrix(segments, n, data),
            Op::SegmentSum(self.id, seg),
        ))
    }

    /// Mean over rows sharing a segment id; empty segments are zero.
    pub fn segment_mean(&self, seg: Index, segments: usize) -> Result<Var<'g>> {
        let (_, n) = self.check_segments("segment_mean", &seg, segments)?;
        let a = self.value();
        let mut data = vec![0.0; segments * n];
        let mut counts = vec![0usize; segments];
        for (r, &s) in seg.iter().enumerate() {
            counts[s] += 1;
            for j in 0..n {
                data[s * n + j] += a.data()[r * n + j];
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                data[s * n..(s + 1) * n]
                    .iter_mut()
                    .for_each(|x| *x /= c as f64);
            }
        }
        Ok(self.unary(
            Tensor::matrix(segments, n, data),
            Op::SegmentMean {
                x: self.id,
                seg,
                counts,
            },
        ))
    }

    /// Column-wise max over rows sharing a segment id; empty segments are
    /// zero. Ties resolve to the lowest row.
    pub fn segment_max(&self, seg: Index, segments: usize) -> Result<Var<'g>> {
        let (_, n) = self.check_segments("segment_max", &seg, segments)?;
        let a = self.value();
        let mut data = vec![0.0; segments * n];
        let mut argmax = vec![usize::MAX; segments * n];
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                let k = s * n + j;
                let v = a.data()[r * n + j];
                if argmax[k] == usize::MAX || v > data[k] {
                    data[k] = v;
                    argmax[k] = r;
                }
            }
        }
        Ok(self.unary(
            Tensor::matrix(segments, n, data),
            Op::SegmentMax { x: self.id, argmax },
        ))
    }

    /// Column-wise softmax across the rows of each segment.
    pub fn segment_softmax(&self, seg: Index, segments: usize) -> Result<Var<'g>> {
        let (m, n) = self.check_segments("segment_softmax", &seg, segments)?;
        let a = self.value();
        let mut maxes = vec![f64::NEG_INFINITY; segments * n];
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                let k = s * n + j;
                maxes[k] = maxes[k].max(a.data()[r * n + j]);
            }
        }
        let mut data = vec![0.0; m * n];
        let mut sums = vec![0.0; segments * n];
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                let e = (a.data()[r * n + j] - maxes[s * n + j]).exp();
                data[r * n + j] = e;
                sums[s * n + j] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for j in 0..n {
                data[r * n + j] /= sums[s * n + j];
            }
        }
        Ok(self.unary(Tensor::matrix(m, n, data), Op::SegmentSoftmax(self.id, seg)))
    }

    /// Row-wise inner products of two `m×n` matrices, giving `m×1`.
    pub fn row_dot(&self, other: &Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch("row_dot", &a, &b));
        }
        let (m, _) = dims("row_dot", &a)?;
        let data = (0..m)
            .map(|i| {
                a.row_slice(i)
                    .iter()
                    .zip(b.row_slice(i))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        Ok(self.binary(
            other,
            Tensor::matrix(m, 1, data),
            Op::RowDot(self.id, other.id),
        ))
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub(crate) fn concat_cols<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| invalid("concat_cols", "no operands"))?;
    let graph = first.graph;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let m = dims("concat_cols", &values[0])?.0;
    for v in &values[1..] {
        let (r, _) = dims("concat_cols", v)?;
        if r != m {
            return Err(mismatch("concat_cols", &values[0], v));
        }
    }
    let n: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for v in &values {
            data.extend_from_slice(v.row_slice(i));
        }
    }
    let ng = parts.iter().any(|p| graph.needs(p.id));
    Ok(graph.push(
        Tensor::matrix(m, n, data),
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        ng,
    ))
}

/// Vertical concatenation of matrices with equal column counts.
pub(crate) fn concat_rows<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| invalid("concat_rows", "no operands"))?;
    let graph = first.graph;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let n = dims("concat_rows", &values[0])?.1;
    for v in &values[1..] {
        let (_, c) = dims("concat_rows", v)?;
        if c != n {
            return Err(mismatch("concat_rows", &values[0], v));
        }
    }
    let m: usize = values.iter().map(|v| v.rows()).sum();
    let mut data = Vec::with_capacity(m * n);
    for v in &values {
        data.extend_from_slice(v.data());
    }
    let ng = parts.iter().any(|p| graph.needs(p.id));
    Ok(graph.push(
        Tensor::matrix(m, n, data),
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        ng,
    ))
}

impl Graph {
    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        concat_cols(parts)
    }

    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        concat_rows(parts)
    }
}
