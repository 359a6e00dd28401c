//! Reverse-mode expression tape.
//!
//! A [`Tape`] records forward operations as they execute; [`Tape::backward`]
//! walks the recording in reverse and accumulates gradients for every
//! parameter the loss touched. Nodes refer to parents by index, so creation
//! order is already a topological order.
//!
//! Tapes are cheap and short-lived: the training loop builds one per user per
//! step and drops it after backward.

use super::params::{Gradients, ParamId, Params};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    GatherRow(ParamId, usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    MulScalar(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    MeanRows(Var),
    SumRows(Var),
    Dot(Var, Var),
    SoftmaxRow(Var),
    Transpose(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Expression graph over a shared read-only parameter set.
pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).scalar_value()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// The whole parameter tensor as a leaf node.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(self.params.get(id).clone(), Op::Param(id))
    }

    /// One row of a parameter table as a `1xc` leaf. Backward scatters the
    /// row gradient back into the table.
    pub fn gather_row(&mut self, id: ParamId, row: usize) -> Var {
        let table = self.params.get(id);
        let value = Tensor::row_vector(table.row(row));
        self.push(value, Op::GatherRow(id, row))
    }

    // ---- arithmetic ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(value, Op::Sub(a, b))
    }

    /// Broadcast-add a `1xc` row vector to every row of an `nxc` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let m = self.value(a);
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a 1xc row vector");
        assert_eq!(m.cols(), r.cols(), "add_row width mismatch");
        let mut out = m.clone();
        let cols = out.cols();
        for i in 0..out.rows() {
            for j in 0..cols {
                out.data_mut()[i * cols + j] += r.data()[j];
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    /// Elementwise `mul * a + add`.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.value(a).map(|v| mul * v + add);
        self.push(value, Op::Affine(a, mul))
    }

    /// Multiply every entry of `a` by the `1x1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a).scale(sv);
        self.push(value, Op::MulScalar(a, s))
    }

    // ---- elementwise nonlinearities ----

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    /// `ln(1 + e^x)`, computed overflow-free.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    // ---- structure ----

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Same data, new dimensions (row-major).
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), rows * cols, "reshape size mismatch");
        let value = Tensor::from_vec(rows, cols, t.data().to_vec());
        self.push(value, Op::Reshape(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.rows() > 0, "mean_rows on an empty tensor");
        let value = pool_rows(t, 1.0 / t.rows() as f64);
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = pool_rows(self.value(a), 1.0);
        self.push(value, Op::SumRows(a))
    }

    /// Inner product of two `1xn` row vectors, as a `1x1` node.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), 1, "dot expects row vectors");
        assert_eq!(ta.shape(), tb.shape(), "dot shape mismatch");
        let v = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    /// Softmax over the entries of a `1xn` row vector, with max-subtraction.
    pub fn softmax_row(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), 1, "softmax_row expects a row vector");
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = Tensor::from_vec(1, t.cols(), exps.iter().map(|&e| e / total).collect());
        self.push(value, Op::SoftmaxRow(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    // ---- composites ----

    /// Sum a non-empty list of same-shaped nodes.
    pub fn sum_vars(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "sum_vars needs at least one node");
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss node.
    ///
    /// Returns the gradient of `loss` with respect to every parameter that it
    /// (transitively) depends on; untouched parameters read as zero.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            [1, 1],
            "backward requires a scalar loss"
        );
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads = Gradients::zeros(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, &out_grad),
                Op::GatherRow(id, row) => {
                    let shape = self.params.get(*id).shape();
                    grads.accumulate_row(*id, *row, shape, out_grad.data());
                }
                Op::MatMul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    accum(&mut adjoints, *a, &out_grad.matmul(&tb.transpose()));
                    accum(&mut adjoints, *b, &ta.transpose().matmul(&out_grad));
                }
                Op::Add(a, b) => {
                    accum(&mut adjoints, *a, &out_grad);
                    accum(&mut adjoints, *b, &out_grad);
                }
                Op::Sub(a, b) => {
                    accum(&mut adjoints, *a, &out_grad);
                    accum(&mut adjoints, *b, &out_grad.scale(-1.0));
                }
                Op::AddRow(a, row) => {
                    accum(&mut adjoints, *a, &out_grad);
                    let cols = out_grad.cols();
                    let mut row_grad = Tensor::zeros(1, cols);
                    for i in 0..out_grad.rows() {
                        for j in 0..cols {
                            row_grad.data_mut()[j] += out_grad.get(i, j);
                        }
                    }
                    accum(&mut adjoints, *row, &row_grad);
                }
                Op::Scale(a, c) => accum(&mut adjoints, *a, &out_grad.scale(*c)),
                Op::Affine(a, mul) => accum(&mut adjoints, *a, &out_grad.scale(*mul)),
                Op::MulScalar(a, s) => {
                    let sv = self.scalar(*s);
                    accum(&mut adjoints, *a, &out_grad.scale(sv));
                    let ta = self.value(*a);
                    let ds: f64 = out_grad
                        .data()
                        .iter()
                        .zip(ta.data())
                        .map(|(g, x)| g * x)
                        .sum();
                    accum(&mut adjoints, *s, &Tensor::scalar(ds));
                }
                Op::Tanh(a) => {
                    let d = zip3(&out_grad, &node.value, |g, y| g * (1.0 - y * y));
                    accum(&mut adjoints, *a, &d);
                }
                Op::Relu(a) => {
                    let d = zip3(&out_grad, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accum(&mut adjoints, *a, &d);
                }
                Op::Sigmoid(a) => {
                    let d = zip3(&out_grad, &node.value, |g, y| g * y * (1.0 - y));
                    accum(&mut adjoints, *a, &d);
                }
                Op::Exp(a) => {
                    let d = zip3(&out_grad, &node.value, |g, y| g * y);
                    accum(&mut adjoints, *a, &d);
                }
                Op::Log(a) => {
                    let d = zip3(&out_grad, self.value(*a), |g, x| g / x);
                    accum(&mut adjoints, *a, &d);
                }
                Op::Softplus(a) => {
                    let d = zip3(&out_grad, self.value(*a), |g, x| g * sigmoid(x));
                    accum(&mut adjoints, *a, &d);
                }
                Op::Clamp(a, lo, hi) => {
                    let d = zip3(&out_grad, self.value(*a), |g, x| {
                        if x > *lo && x < *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    accum(&mut adjoints, *a, &d);
                }
                Op::ConcatRows(parts) => {
                    let cols = out_grad.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice =
                            &out_grad.data()[offset * cols..(offset + rows) * cols];
                        accum(
                            &mut adjoints,
                            p,
                            &Tensor::from_vec(rows, cols, slice.to_vec()),
                        );
                        offset += rows;
                    }
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape();
                    accum(
                        &mut adjoints,
                        *a,
                        &Tensor::from_vec(shape[0], shape[1], out_grad.data().to_vec()),
                    );
                }
                Op::MeanRows(a) => {
                    let t = self.value(*a);
                    let scale = 1.0 / t.rows() as f64;
                    accum(&mut adjoints, *a, &broadcast_rows(&out_grad, t.rows(), scale));
                }
                Op::SumRows(a) => {
                    let t = self.value(*a);
                    accum(&mut adjoints, *a, &broadcast_rows(&out_grad, t.rows(), 1.0));
                }
                Op::Dot(a, b) => {
                    let g = out_grad.scalar_value();
                    accum(&mut adjoints, *a, &self.value(*b).scale(g));
                    accum(&mut adjoints, *b, &self.value(*a).scale(g));
                }
                Op::SoftmaxRow(a) => {
                    let s = node.value.data();
                    let gy = out_grad.data();
                    let inner: f64 = gy.iter().zip(s).map(|(g, si)| g * si).sum();
                    let d: Vec<f64> = gy
                        .iter()
                        .zip(s)
                        .map(|(g, si)| si * (g - inner))
                        .collect();
                    accum(
                        &mut adjoints,
                        *a,
                        &Tensor::from_vec(1, s.len(), d),
                    );
                }
                Op::Transpose(a) => accum(&mut adjoints, *a, &out_grad.transpose()),
            }
        }
        grads
    }
}

fn accum(adjoints: &mut [Option<Tensor>], v: Var, delta: &Tensor) {
    match &mut adjoints[v.0] {
        Some(g) => *g = g.add(delta),
        slot => *slot = Some(delta.clone()),
    }
}

fn zip3(grad: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = grad
        .data()
        .iter()
        .zip(other.data())
        .map(|(&g, &x)| f(g, x))
        .collect();
    Tensor::from_vec(grad.rows(), grad.cols(), data)
}

fn pool_rows(t: &Tensor, scale: f64) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            out.data_mut()[j] += t.get(i, j) * scale;
        }
    }
    out
}

fn broadcast_rows(row: &Tensor, rows: usize, scale: f64) -> Tensor {
    let cols = row.cols();
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out.data_mut()[i * cols + j] = row.data()[j] * scale;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
