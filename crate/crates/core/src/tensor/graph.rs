use super::kernels::{matmul_into, matmul_t_into, t_matmul_into};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Work counters recorded while a graph is built.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Multiply-accumulates spent forming attention score matrices `Q K^T`.
    pub attention_score_macs: u64,
    /// Recurrent cell time steps executed.
    pub rnn_steps: u64,
    /// Multiply-accumulates in all matrix products.
    pub matmul_macs: u64,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Elu(Var, f64),
    Relu(Var),
    Sqrt(Var),
    Affine(Var, f64),
    SoftmaxLast(Var),
    Sum(Var),
    SumLast(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    MaskedFill(Var, Vec<bool>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of executed operations.
///
/// Nodes are appended in execution order, which is already a topological
/// order; `backward` walks it in reverse. A graph is meant to live for one
/// forward/backward pass and then be dropped.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_slots: Vec<Option<Var>>,
    param_order: Vec<(ParamId, Var)>,
    backward_done: bool,
    counters: OpCounters,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn broadcast_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (ra, ca) = a.dims();
    let (rb, cb) = b.dims();
    let pick = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (pick(ra, rb), pick(ca, cb)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }),
    }
}

/// Sum a `[r, c]` gradient down to an operand of shape `[ro, co]`, where each
/// operand extent is either equal or 1.
fn reduce_to(g: &Tensor, ro: usize, co: usize) -> Tensor {
    let (r, c) = g.dims();
    if r == ro && c == co {
        return g.clone();
    }
    let mut out = vec![0.0; ro * co];
    for i in 0..r {
        let oi = if ro == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if co == 1 { 0 } else { j };
            out[oi * co + oj] += g.get(i, j);
        }
    }
    Tensor::matrix(ro, co, out)
}

fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    r: usize,
    c: usize,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let (ra, ca) = a.dims();
    let (rb, cb) = b.dims();
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ia = if ra == 1 { 0 } else { i };
        let ib = if rb == 1 { 0 } else { i };
        for j in 0..c {
            let ja = if ca == 1 { 0 } else { j };
            let jb = if cb == 1 { 0 } else { j };
            out.push(f(ad[ia * ca + ja], bd[ib * cb + jb]));
        }
    }
    Tensor::matrix(r, c, out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counters(&self) -> &OpCounters {
        &self.counters
    }

    pub fn counters_mut(&mut self) -> &mut OpCounters {
        &mut self.counters
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.as_matrix(), Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value.as_matrix(), Op::Leaf, requires_grad)
    }

    /// Bring a stored parameter into the graph. Repeated calls for the same
    /// parameter return the same leaf, so gradients accumulate across uses.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_slots.get(id.0) {
            return *v;
        }
        let v = self.leaf(store.value(id).clone(), !store.is_frozen(id));
        if self.param_slots.len() <= id.0 {
            self.param_slots.resize(id.0 + 1, None);
        }
        self.param_slots[id.0] = Some(v);
        self.param_order.push((id, v));
        v
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_order.iter().copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Clear gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ----- binary element-wise ops with row/column broadcasting -----

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (r, c) = broadcast_dims(op, self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), r, c, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, mk(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.counters.matmul_macs += (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    // ----- unary ops -----

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// `ln(1 + e^x)` in the overflow-free form `max(x, 0) + ln(1 + e^-|x|)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { alpha * x.exp_m1() },
            Op::Elu(a, alpha),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// `scale * x + shift`, element-wise with scalar coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, move |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut s = 0.0;
            for &v in row {
                let e = (v - m).exp();
                s += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= s);
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, c, out), Op::SoftmaxLast(a), rg)
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Row sums, `[r, c] -> [r, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let r = x.rows();
        let out: Vec<f64> = (0..r).map(|i| x.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Tensor::matrix(r, 1, out), Op::SumLast(a), rg)
    }

    pub fn mean_last(&mut self, a: Var) -> Var {
        let c = self.dims(a).1 as f64;
        let s = self.sum_last(a);
        self.affine(s, 1.0 / c, 0.0)
    }

    /// Column sums, `[r, c] -> [1, c]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::matrix(1, c, out), Op::SumRows(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let r = self.dims(a).0 as f64;
        let s = self.sum_rows(a);
        self.affine(s, 1.0 / r, 0.0)
    }

    // ----- structural ops -----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Empty("concat of nothing".into()))?;
        let r = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Empty("concat of nothing".into()))?;
        let c = self.dims(first).1;
        let mut out = Vec::new();
        for &p in parts {
            if self.dims(p).1 != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > c {
            return Err(Error::InvalidShape {
                shape: vec![r, c],
                reason: format!("column slice {start}..{end} out of range"),
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&x.row(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(r, end - start, out),
            Op::SliceCols(a, start),
            rg,
        ))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start >= end || end > r {
            return Err(Error::InvalidShape {
                shape: vec![r, c],
                reason: format!("row slice {start}..{end} out of range"),
            });
        }
        let out = self.value(a).data()[start * c..end * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(end - start, c, out),
            Op::SliceRows(a, start),
            rg,
        ))
    }

    /// Output column `j` is input column `index[j]`.
    pub fn gather_cols(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if index.is_empty() || index.iter().any(|&j| j >= c) {
            return Err(Error::InvalidShape {
                shape: vec![r, c],
                reason: "column index out of range".into(),
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(r * index.len());
        for i in 0..r {
            let row = x.row(i);
            out.extend(index.iter().map(|&j| row[j]));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(r, index.len(), out),
            Op::GatherCols(a, index.to_vec()),
            rg,
        ))
    }

    /// Output row `i` is input row `index[i]` (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return Err(Error::InvalidShape {
                shape: vec![r, c],
                reason: "row index out of range".into(),
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(x.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(index.len(), c, out),
            Op::GatherRows(a, index.to_vec()),
            rg,
        ))
    }

    /// Replace entries where `mask` is true with `value`; those entries pass
    /// no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "masked_fill",
                left: x.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let (r, c) = x.dims();
        let out: Vec<f64> = x
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(r, c, out),
            Op::MaskedFill(a, mask.to_vec()),
            rg,
        ))
    }

    // ----- reverse pass -----

    /// Propagate gradients from a scalar output to every reachable node that
    /// requires them. Gradients from multiple uses of a node add up.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(out).shape().to_vec();
        if self.value(out).len() != 1 {
            return Err(Error::NonScalarBackward { shape });
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[out.0] = Some(Tensor::scalar(1.0));

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.grads[i] = Some(g);
            for (parent, pg) in contributions {
                match &mut self.grads[parent.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(pg.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut out = Vec::new();
        let mut emit = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                out.push((v, t));
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor::matrix(y.rows(), y.cols(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let (ra, ca) = val(*a).dims();
                let (rb, cb) = val(*b).dims();
                emit(*a, reduce_to(g, ra, ca));
                emit(*b, reduce_to(&g.map(|v| sign * v), rb, cb));
            }
            Op::Mul(a, b) => {
                let (r, c) = y.dims();
                let (ra, ca) = val(*a).dims();
                let (rb, cb) = val(*b).dims();
                let ga = zip_broadcast(g, val(*b), r, c, |gv, bv| gv * bv);
                let gb = zip_broadcast(g, val(*a), r, c, |gv, av| gv * av);
                emit(*a, reduce_to(&ga, ra, ca));
                emit(*b, reduce_to(&gb, rb, cb));
            }
            Op::Div(a, b) => {
                let (r, c) = y.dims();
                let (ra, ca) = val(*a).dims();
                let (rb, cb) = val(*b).dims();
                let ga = zip_broadcast(g, val(*b), r, c, |gv, bv| gv / bv);
                // d(a/b)/db = -y/b
                let gy = zip_broadcast(g, y, r, c, |gv, yv| gv * yv);
                let gb = zip_broadcast(&gy, val(*b), r, c, |gyv, bv| -gyv / bv);
                emit(*a, reduce_to(&ga, ra, ca));
                emit(*b, reduce_to(&gb, rb, cb));
            }
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims();
                let n = val(*b).cols();
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    matmul_t_into(g.data(), val(*b).data(), &mut ga, m, n, k);
                    emit(*a, Tensor::matrix(m, k, ga));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    t_matmul_into(val(*a).data(), g.data(), &mut gb, m, k, n);
                    emit(*b, Tensor::matrix(k, n, gb));
                }
            }
            Op::Transpose(a) => emit(*a, g.transpose()),
            Op::Exp(a) => emit(*a, elementwise(val(*a), &|_, yv, gv| gv * yv)),
            Op::Log(a) => emit(*a, elementwise(val(*a), &|xv, _, gv| gv / xv)),
            Op::Tanh(a) => emit(*a, elementwise(val(*a), &|_, yv, gv| gv * (1.0 - yv * yv))),
            Op::Sigmoid(a) => emit(*a, elementwise(val(*a), &|_, yv, gv| gv * yv * (1.0 - yv))),
            Op::Softplus(a) => emit(*a, elementwise(val(*a), &|xv, _, gv| gv * sigmoid(xv))),
            Op::Elu(a, alpha) => {
                let alpha = *alpha;
                emit(
                    *a,
                    elementwise(val(*a), &|xv, yv, gv| {
                        if xv > 0.0 {
                            gv
                        } else {
                            gv * (yv + alpha)
                        }
                    }),
                )
            }
            Op::Relu(a) => emit(
                *a,
                elementwise(val(*a), &|xv, _, gv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::Sqrt(a) => emit(*a, elementwise(val(*a), &|_, yv, gv| gv / (2.0 * yv))),
            Op::Affine(a, scale) => {
                let s = *scale;
                emit(*a, g.map(|v| v * s));
            }
            Op::SoftmaxLast(a) => {
                let (r, c) = y.dims();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).dims();
                emit(*a, Tensor::full(r, c, g.item()));
            }
            Op::SumLast(a) => {
                let (r, c) = val(*a).dims();
                let data = (0..r)
                    .flat_map(|i| std::iter::repeat_n(g.data()[i], c))
                    .collect();
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).dims();
                let data = (0..r).flat_map(|_| g.data().iter().copied()).collect();
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::ConcatCols(parts) => {
                let r = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    let mut data = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        data.extend_from_slice(&g.row(i)[offset..offset + pc]);
                    }
                    emit(p, Tensor::matrix(r, pc, data));
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let c = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    let data = g.data()[offset..offset + n].to_vec();
                    emit(p, Tensor::matrix(n / c, c, data));
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).dims();
                let w = y.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    data[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).dims();
                let mut data = vec![0.0; r * c];
                data[start * c..start * c + g.len()].copy_from_slice(g.data());
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::GatherCols(a, index) => {
                let (r, c) = val(*a).dims();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for (j, &src) in index.iter().enumerate() {
                        data[i * c + src] += g.get(i, j);
                    }
                }
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::GatherRows(a, index) => {
                let (r, c) = val(*a).dims();
                let mut data = vec![0.0; r * c];
                for (j, &src) in index.iter().enumerate() {
                    for (d, v) in data[src * c..(src + 1) * c].iter_mut().zip(g.row(j)) {
                        *d += v;
                    }
                }
                emit(*a, Tensor::matrix(r, c, data));
            }
            Op::MaskedFill(a, mask) => {
                let (r, c) = y.dims();
                let data = g
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&gv, &m)| if m { 0.0 } else { gv })
                    .collect();
                emit(*a, Tensor::matrix(r, c, data));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn add_vectors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row_vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::row_vector(vec![3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let s = g.softmax_last(a);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let m = g.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(3, 2));
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"),
            "{msg}"
        );
        assert!(matches!(
            g.matmul(a, a),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn power_rule() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0), true);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let y = g.leaf(Tensor::scalar(3.0), true);
        let l = g.mul(x, y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0);
        assert_eq!(g.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::row_vector(vec![0.3, -1.2, 2.0, 0.1]), true);
        let s = g.softmax_last(v);
        let l = g.sum(s);
        g.backward(l).unwrap();
        for &d in g.grad(v).unwrap().data() {
            assert!(d.abs() < 1e-15);
        }
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(vec![1.0, 2.0]), true);
        let y = g.exp(x);
        assert!(matches!(
            g.backward(y),
            Err(Error::NonScalarBackward { .. })
        ));
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::BackwardTwice)));
        g.reset_grads();
        g.backward(l).unwrap();
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // L = x*x + 3x at x = 2 -> dL/dx = 2x + 3 = 7
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0), true);
        let sq = g.mul(x, x).unwrap();
        let lin = g.affine(x, 3.0, 0.0);
        let l = g.add(sq, lin).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 7.0);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::row_vector(vec![-800.0, -40.0, 0.0, 40.0, 800.0]),
            true,
        );
        let y = g.softplus(x);
        let v = g.value(y).data().to_vec();
        assert!(v.iter().all(|x| x.is_finite()));
        assert_eq!(v[4], 800.0);
        assert!((v[2] - std::f64::consts::LN_2).abs() < 1e-15);
        let l = g.sum(y);
        g.backward(l).unwrap();
        let d = g.grad(x).unwrap().data().to_vec();
        assert!(d.iter().all(|x| x.is_finite()));
        assert_eq!(d[4], 1.0);
        assert!(d[0] >= 0.0 && d[0] < 1e-300);
    }

    #[test]
    fn broadcasting_reduces_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(3, 2), true);
        let b = g.leaf(Tensor::row_vector(vec![1.0, 2.0]), true);
        let y = g.add(x, b).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn masked_fill_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row_vector(vec![1.0, 2.0, 3.0]), true);
        let m = g
            .masked_fill(x, &[false, true, false], f64::NEG_INFINITY)
            .unwrap();
        let s = g.softmax_last(m);
        assert_eq!(g.value(s).data()[1], 0.0);
        let w = g.constant(Tensor::row_vector(vec![1.0, 5.0, -2.0]));
        let p = g.mul(s, w).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data()[1], 0.0);
    }
}
