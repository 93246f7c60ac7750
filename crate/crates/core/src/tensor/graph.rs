//! Reverse-mode differentiation over a linear tape of dense row-major tensors.
//!
//! Every op appends a node to the [`Graph`] and returns a [`Var`] handle.
//! [`Graph::backward`] (or [`Graph::backward_seeded`] for vector-valued
//! outputs) walks the tape in reverse and returns [`Gradients`] for every node
//! that requires them. A graph is single-writer: build it, consume it, drop it.

use super::Scalar;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `shape` split around one axis: `outer × dim × inner`.
#[derive(Clone, Copy, Debug)]
struct AxisSplit {
    outer: usize,
    dim: usize,
    inner: usize,
}

impl AxisSplit {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Argument(format!(
                "axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(Self {
            outer: shape[..axis].iter().product(),
            dim: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    #[inline]
    fn at(&self, o: usize, d: usize, i: usize) -> usize {
        (o * self.dim + d) * self.inner + i
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, AxisSplit),
    LogSoftmax(Var, AxisSplit),
    MaxReduce(Var, AxisSplit, Vec<usize>),
    Concat(Vec<Var>, Vec<usize>, usize, usize),
    L2Normalize(Var, Vec<T>),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Rows whose norm falls below this are rejected by [`Graph::l2_normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<Var> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero-sized dimension in {shape:?}")));
        }
        if numel(shape) != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    /// Leaf that receives a gradient on backward.
    pub fn variable(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Dimension(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of [{m}, {k}] and [{k2}, {n}]"
            )));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = av[i * k + p];
                if s == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bb) in row.iter_mut().zip(brow) {
                    *o = *o + s * bb;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let out = transpose_values(self.value(a), m, n);
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), rg)
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "add_bias")?;
        if self.shape(b) != [n] {
            return Err(Error::Dimension(format!(
                "bias {:?} for rows of [{m}, {n}]",
                self.shape(b)
            )));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bv) {
                *o = *o + bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(vec![m, n], out, Op::AddBias(x, b), rg))
    }

    /// `x · w + b` with `x: m×k`, `w: k×n`, `b: n`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.exp()).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).iter().find(|&&x| x <= T::zero()) {
            return Err(Error::Degenerate(format!("log of non-positive value {x}")));
        }
        let out = self.value(a).iter().map(|&x| x.ln()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Log(a), rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let split = AxisSplit::new(self.shape(a), axis)?;
        let out = softmax_values(self.value(a), split, false);
        let rg = self.rg(&[a]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax(a, split), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let split = AxisSplit::new(self.shape(a), axis)?;
        let out = softmax_values(self.value(a), split, true);
        let rg = self.rg(&[a]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::LogSoftmax(a, split), rg))
    }

    /// Max along `axis`, which is removed from the output shape. Returns the
    /// winning position along the axis for every output element; ties go to
    /// the lowest position.
    pub fn max_reduce(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let split = AxisSplit::new(self.shape(a), axis)?;
        let x = self.value(a);
        let mut out = Vec::with_capacity(split.outer * split.inner);
        let mut arg = Vec::with_capacity(split.outer * split.inner);
        for o in 0..split.outer {
            for i in 0..split.inner {
                let mut best = 0;
                let mut bv = x[split.at(o, 0, i)];
                for d in 1..split.dim {
                    let v = x[split.at(o, d, i)];
                    if v > bv {
                        bv = v;
                        best = d;
                    }
                }
                out.push(bv);
                arg.push(best);
            }
        }
        let mut shape = self.shape(a).to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[a]);
        let v = self.push(shape, out, Op::MaxReduce(a, split, arg.clone()), rg);
        Ok((v, arg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Argument("concat of an empty list".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Argument(format!(
                "axis {axis} out of range for shape {base:?}"
            )));
        }
        let mut sizes = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let agree = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !agree {
                return Err(Error::Dimension(format!(
                    "concat along axis {axis} of {base:?} and {s:?}"
                )));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &sz) in xs.iter().zip(&sizes) {
                let chunk = sz * inner;
                out.extend_from_slice(&self.value(x)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(xs);
        Ok(self.push(shape, out, Op::Concat(xs.to_vec(), sizes, outer, inner), rg))
    }

    /// Scales every row of an `n × C` matrix to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.matrix_dims(a, "l2_normalize")?;
        let x = self.value(a);
        let mut norms = Vec::with_capacity(x.len() / c);
        let mut out = Vec::with_capacity(x.len());
        for (r, row) in x.chunks(c).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n.as_f64() < NORM_EPSILON {
                return Err(Error::Degenerate(format!(
                    "row {r} has norm {n} below {NORM_EPSILON:e}"
                )));
            }
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::L2Normalize(a, norms), rg))
    }

    /// Row gather: `out[r] = x[idx[r]]` for a matrix `x`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::Argument("gather_rows with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::Argument(format!("row {bad} out of range for {m} rows")));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&x[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![idx.len(), n], out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// `out[i] = x[i, idx[i]]` for an `m × n` matrix.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "pick")?;
        if idx.len() != m {
            return Err(Error::Dimension(format!("pick of {} indices from {m} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Argument(format!("column {bad} out of range for {n} columns")));
        }
        let x = self.value(a);
        let out = idx.iter().enumerate().map(|(i, &j)| x[i * n + j]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m], out, Op::Pick(a, idx.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.iter().copied().sum::<T>() / T::from_f64(x.len() as f64);
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(Error::Dimension(format!(
                "reshape of {:?} to {shape:?}",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), rg))
    }

    /// Backpropagates from a single-element node with seed 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_seeded(&[(loss, vec![T::one()])])
    }

    /// Backpropagates from arbitrary nodes with explicit upstream gradients.
    /// Seeds on the same node are summed.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            if g.len() != self.value(*v).len() {
                return Err(Error::Dimension(format!(
                    "seed of {} values for node of shape {:?}",
                    g.len(),
                    self.shape(*v)
                )));
            }
            accumulate(&mut grads, *v, self.value(*v).len(), |dst| {
                for (d, &s) in dst.iter_mut().zip(g) {
                    *d = *d + s;
                }
            });
            top = top.max(v.0 + 1);
        }
        for idx in (0..top).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let n_of = |v: Var| self.nodes[v.0].value.len();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if wants(*a) {
                    // dA = dY · Bᵀ
                    let bt = transpose_values(self.value(*b), k, n);
                    accumulate(grads, *a, m * k, |da| {
                        for i in 0..m {
                            let grow = &gy[i * n..(i + 1) * n];
                            let drow = &mut da[i * k..(i + 1) * k];
                            for (j, &g) in grow.iter().enumerate() {
                                if g == T::zero() {
                                    continue;
                                }
                                for (d, &bb) in drow.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                                    *d = *d + g * bb;
                                }
                            }
                        }
                    });
                }
                if wants(*b) {
                    // dB = Aᵀ · dY
                    let av = self.value(*a);
                    accumulate(grads, *b, k * n, |db| {
                        for i in 0..m {
                            let grow = &gy[i * n..(i + 1) * n];
                            for p in 0..k {
                                let s = av[i * k + p];
                                if s == T::zero() {
                                    continue;
                                }
                                for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d = *d + s * g;
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                let back = transpose_values(gy, n, m);
                add_into(grads, *a, &back);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(grads, *a, gy);
                }
                if wants(*b) {
                    add_into(grads, *b, gy);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(grads, *a, gy);
                }
                if wants(*b) {
                    accumulate(grads, *b, gy.len(), |d| {
                        for (d, &g) in d.iter_mut().zip(gy) {
                            *d = *d - g;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = self.value(*b);
                    accumulate(grads, *a, gy.len(), |d| {
                        for ((d, &g), &y) in d.iter_mut().zip(gy).zip(bv) {
                            *d = *d + g * y;
                        }
                    });
                }
                if wants(*b) {
                    let av = self.value(*a);
                    accumulate(grads, *b, gy.len(), |d| {
                        for ((d, &g), &x) in d.iter_mut().zip(gy).zip(av) {
                            *d = *d + g * x;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, gy.len(), |d| {
                    for (d, &g) in d.iter_mut().zip(gy) {
                        *d = *d + g * *c;
                    }
                });
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    add_into(grads, *x, gy);
                }
                if wants(*b) {
                    let n = n_of(*b);
                    accumulate(grads, *b, n, |d| {
                        for row in gy.chunks(n) {
                            for (d, &g) in d.iter_mut().zip(row) {
                                *d = *d + g;
                            }
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let xv = self.value(*a);
                accumulate(grads, *a, gy.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gy).zip(xv) {
                        if x > T::zero() {
                            *d = *d + g;
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let yv = &node.value;
                accumulate(grads, *a, gy.len(), |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(gy).zip(yv) {
                        *d = *d + g * y;
                    }
                });
            }
            Op::Log(a) => {
                let xv = self.value(*a);
                accumulate(grads, *a, gy.len(), |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(gy).zip(xv) {
                        *d = *d + g / x;
                    }
                });
            }
            Op::Softmax(a, s) => {
                let y = &node.value;
                accumulate(grads, *a, gy.len(), |d| {
                    for o in 0..s.outer {
                        for i in 0..s.inner {
                            let mut dot = T::zero();
                            for k in 0..s.dim {
                                let p = s.at(o, k, i);
                                dot = dot + gy[p] * y[p];
                            }
                            for k in 0..s.dim {
                                let p = s.at(o, k, i);
                                d[p] = d[p] + y[p] * (gy[p] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax(a, s) => {
                let y = &node.value;
                accumulate(grads, *a, gy.len(), |d| {
                    for o in 0..s.outer {
                        for i in 0..s.inner {
                            let mut total = T::zero();
                            for k in 0..s.dim {
                                total = total + gy[s.at(o, k, i)];
                            }
                            for k in 0..s.dim {
                                let p = s.at(o, k, i);
                                d[p] = d[p] + gy[p] - y[p].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::MaxReduce(a, s, arg) => {
                accumulate(grads, *a, n_of(*a), |d| {
                    for o in 0..s.outer {
                        for i in 0..s.inner {
                            let q = o * s.inner + i;
                            let p = s.at(o, arg[q], i);
                            d[p] = d[p] + gy[q];
                        }
                    }
                });
            }
            Op::Concat(xs, sizes, outer, inner) => {
                let total: usize = sizes.iter().sum();
                let mut offset = 0;
                for (&x, &sz) in xs.iter().zip(sizes) {
                    if wants(x) {
                        let chunk = sz * inner;
                        accumulate(grads, x, outer * chunk, |d| {
                            for o in 0..*outer {
                                let src = &gy[o * total * inner + offset * inner..][..chunk];
                                for (d, &g) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *d = *d + g;
                                }
                            }
                        });
                    }
                    offset += sz;
                }
            }
            Op::L2Normalize(a, norms) => {
                let y = &node.value;
                let c = y.len() / norms.len();
                accumulate(grads, *a, y.len(), |d| {
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &gy[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yy), &g) in d[r * c..(r + 1) * c].iter_mut().zip(yr).zip(gr) {
                            *d = *d + (g - yy * dot) / n;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let n = self.shape(*a)[1];
                accumulate(grads, *a, n_of(*a), |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, &g) in d[i * n..(i + 1) * n].iter_mut().zip(&gy[r * n..(r + 1) * n]) {
                            *d = *d + g;
                        }
                    }
                });
            }
            Op::Pick(a, idx) => {
                let n = self.shape(*a)[1];
                accumulate(grads, *a, n_of(*a), |d| {
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * n + j] = d[i * n + j] + gy[i];
                    }
                });
            }
            Op::Sum(a) => {
                let g = gy[0];
                accumulate(grads, *a, n_of(*a), |d| d.iter_mut().for_each(|d| *d = *d + g));
            }
            Op::Mean(a) => {
                let len = n_of(*a);
                let g = gy[0] / T::from_f64(len as f64);
                accumulate(grads, *a, len, |d| d.iter_mut().for_each(|d| *d = *d + g));
            }
            Op::Reshape(a) => add_into(grads, *a, gy),
        }
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    v: Var,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    accumulate(grads, v, g.len(), |d| {
        for (d, &s) in d.iter_mut().zip(g) {
            *d = *d + s;
        }
    });
}

fn transpose_values<T: Scalar>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

fn softmax_values<T: Scalar>(x: &[T], s: AxisSplit, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..s.outer {
        for i in 0..s.inner {
            let mut mx = T::neg_infinity();
            for k in 0..s.dim {
                mx = mx.max(x[s.at(o, k, i)]);
            }
            let mut total = T::zero();
            for k in 0..s.dim {
                total = total + (x[s.at(o, k, i)] - mx).exp();
            }
            let lse = total.ln();
            for k in 0..s.dim {
                let p = s.at(o, k, i);
                let z = x[p] - mx;
                out[p] = if log { z - lse } else { z.exp() / total };
            }
        }
    }
    out
}

/// Gradients produced by a backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not require gradients. Nodes that require
    /// gradients but were not reached by the backward pass read as zeros via
    /// [`Gradients::get_or_zeros`].
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, g: &Graph<T>, v: Var) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); g.value(v).len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = g.constant(&[2, 2], vec![1.5, -2.0, 0.25, 7.0]).unwrap();
        let y = g.matmul(i, a).unwrap();
        assert_eq!(g.value(y), g.value(a));
    }

    #[test]
    fn hand_matmul() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(y), &[2, 1]);
        assert_eq!(g.value(y), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2], vec![-1.0, 2.0]).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1, 4], vec![0.3; 4]).unwrap();
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(y), &[0.25; 4]);
    }

    #[test]
    fn normalize_three_four_five() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1, 2], vec![3.0, 4.0]).unwrap();
        let y = g.l2_normalize(x).unwrap();
        assert!((g.value(y)[0] - 0.6).abs() < 1e-15);
        assert!((g.value(y)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let y = g.l2_normalize(x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(g.l2_normalize(x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn max_reduce_ties_take_first_index() {
        let mut g = Graph::<f64>::new();
        let x = g.variable(&[1, 3], vec![2.0, 5.0, 5.0]).unwrap();
        let (y, arg) = g.max_reduce(x, 1).unwrap();
        assert_eq!(arg, vec![1]);
        let s = g.sum(y);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn invalid_axis_and_empty_concat() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(g.softmax(x, 2), Err(Error::Argument(_))));
        assert!(matches!(g.max_reduce(x, 5), Err(Error::Argument(_))));
        assert!(matches!(g.concat(&[], 0), Err(Error::Argument(_))));
    }

    #[test]
    fn concat_checks_other_dims() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let b = g.constant(&[3, 1], vec![0.0; 3]).unwrap();
        assert!(matches!(g.concat(&[a, b], 1), Err(Error::Dimension(_))));
        let c = g.constant(&[2, 1], vec![9.0, 8.0]).unwrap();
        let y = g.concat(&[a, c], 1).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 9.0, 0.0, 0.0, 8.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&[1], vec![2.0]).unwrap();
        let b = g.variable(&[1], vec![3.0]).unwrap();
        let y = g.mul(a, b).unwrap();
        let gr = g.backward(y).unwrap();
        assert!(gr.get(a).is_none());
        assert_eq!(gr.get(b).unwrap(), &[2.0]);
    }
}
