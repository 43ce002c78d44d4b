//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass in append order,
//! which is already a topological order. [`Graph::backward`] consumes the tape
//! once, walking it in exact reverse.
//!
//! Broadcasting is limited to two forms: a one-element tensor against any
//! tensor, and a `1×n` row vector against an `m×n` matrix.

mod backward;
pub(crate) mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use kernels::ConvGeom;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Sigmoid,
    Log,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
    LhsRow,
    RhsRow,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul,
    Binary(Binary),
    Unary(Unary),
    Scale(f64),
    Clamp(f64, f64),
    Softmax,
    Concat,
    StackRows,
    SliceCols(usize),
    SliceRows(usize),
    Reshape,
    TileRows,
    Sum,
    Gather(Vec<usize>),
    Conv2d(ConvGeom),
    MaxPool2(Vec<usize>),
    GlobalAvgPool,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Binary(Binary::Add) => "add",
            Op::Binary(Binary::Sub) => "sub",
            Op::Binary(Binary::Mul) => "mul",
            Op::Unary(Unary::Tanh) => "tanh",
            Op::Unary(Unary::Relu) => "relu",
            Op::Unary(Unary::Sigmoid) => "sigmoid",
            Op::Unary(Unary::Log) => "log",
            Op::Unary(Unary::Exp) => "exp",
            Op::Scale(_) => "scale",
            Op::Clamp(..) => "clamp",
            Op::Softmax => "softmax",
            Op::Concat => "concat",
            Op::StackRows => "stack_rows",
            Op::SliceCols(_) => "slice_cols",
            Op::SliceRows(_) => "slice_rows",
            Op::Reshape => "reshape",
            Op::TileRows => "tile_rows",
            Op::Sum => "sum",
            Op::Gather(_) => "gather",
            Op::Conv2d(_) => "conv2d",
            Op::MaxPool2(_) => "max_pool2",
            Op::GlobalAvgPool => "global_avg_pool",
        }
    }
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p, T> {
    op: Op,
    inputs: Vec<usize>,
    value: Value<'p, T>,
    requires_grad: bool,
}

/// First non-finite value observed during the forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub node: usize,
    pub op: &'static str,
}

impl core::fmt::Display for Fault {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "non-finite output of `{}` at node {}", self.op, self.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes whose local gradient was evaluated (one per visited node).
    pub local_gradients: usize,
}

/// Append-only computation tape. Leaves may borrow parameter tensors for the
/// lifetime `'p` so that recording a forward pass does not copy weights.
pub struct Graph<'p, T> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> impl Iterator<Item = Var> + '_ {
        self.nodes[v.0].inputs.iter().map(|&i| Var(i))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to `v`, available after
    /// [`Graph::backward`]. `None` when no gradient reached the node.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Value<'p, T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.fault.is_none() && !value.get().is_finite() {
            self.fault = Some(Fault {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(id)
    }

    fn push_op(&mut self, op: Op, inputs: Vec<usize>, out: Tensor<T>) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(op, inputs, Value::Owned(out), rg)
    }

    // ---- leaves ----

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, vec![], Value::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Op::Leaf, vec![], Value::Borrowed(t), false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, vec![], Value::Owned(t), true)
    }

    /// Borrowed leaf that receives a gradient; used for model parameters.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Op::Leaf, vec![], Value::Borrowed(t), true)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.dims2(), tb.dims2()) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        Ok(self.push_op(Op::MatMul, vec![a.0, b.0], Tensor::from_parts(vec![m, n], out)))
    }

    // ---- elementwise ----

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bc = broadcast_kind(ta.shape(), tb.shape()).ok_or_else(|| Error::Dimension {
            op: Op::Binary(op).name(),
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        let f = |x: T, y: T| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out = match bc {
            Broadcast::Same => Tensor::from_parts(
                ta.shape().to_vec(),
                ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Broadcast::LhsScalar => {
                let s = ta.data()[0];
                tb.map(|y| f(s, y))
            }
            Broadcast::RhsScalar => {
                let s = tb.data()[0];
                ta.map(|x| f(x, s))
            }
            Broadcast::LhsRow => {
                let n = ta.len();
                let data = tb
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| f(ta.data()[i % n], y))
                    .collect();
                Tensor::from_parts(tb.shape().to_vec(), data)
            }
            Broadcast::RhsRow => {
                let n = tb.len();
                let data = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, tb.data()[i % n]))
                    .collect();
                Tensor::from_parts(ta.shape().to_vec(), data)
            }
        };
        Ok(self.push_op(Op::Binary(op), vec![a.0, b.0], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = match op {
            Unary::Tanh => t.map(|x| x.tanh()),
            Unary::Relu => t.map(|x| if x > T::zero() { x } else { T::zero() }),
            Unary::Sigmoid => t.map(sigmoid),
            Unary::Exp => t.map(|x| x.exp()),
            Unary::Log => {
                if let Some(&bad) = t.data().iter().find(|&&x| x <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        value: bad.to_f64_lossy(),
                    });
                }
                t.map(|x| x.ln())
            }
        };
        Ok(self.push_op(Op::Unary(op), vec![a.0], out))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let s = T::lit(factor);
        let out = self.value(a).map(|x| x * s);
        self.push_op(Op::Scale(factor), vec![a.0], out)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::lit(lo), T::lit(hi));
        let out = self.value(a).map(|x| x.max(l).min(h));
        self.push_op(Op::Clamp(lo, hi), vec![a.0], out)
    }

    // ---- reductions and normalisation ----

    /// Row-wise softmax of a rank-2 tensor, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, n) = t.dims2().ok_or_else(|| Error::Shape {
            op: "softmax",
            message: alloc::format!("expected a matrix, got {:?}", t.shape()),
        })?;
        let mut out = t.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        Ok(self.push_op(Op::Softmax, vec![a.0], out))
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push_op(Op::Sum, vec![a.0], Tensor::scalar(s))
    }

    // ---- structural ----

    /// Order-preserving concatenation of row vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !matches!(t.dims2(), Some((1, _))) {
                return Err(Error::Shape {
                    op: "concat",
                    message: alloc::format!("parts must be row vectors, got {:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::row(data);
        Ok(self.push_op(Op::Concat, parts.iter().map(|v| v.0).collect(), out))
    }

    /// Stacks `m` row vectors of equal width into an `m×n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::Empty("stack_rows"))?;
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.dims2() != Some((1, width)) {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    lhs: vec![1, width],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![rows.len(), width], data);
        Ok(self.push_op(Op::StackRows, rows.iter().map(|v| v.0).collect(), out))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2().ok_or_else(|| Error::Shape {
            op: "slice_cols",
            message: alloc::format!("expected a matrix, got {:?}", t.shape()),
        })?;
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                message: alloc::format!("range {start}..{} outside {c} columns", start + len),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in t.data().chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_parts(vec![r, len], data);
        Ok(self.push_op(Op::SliceCols(start), vec![a.0], out))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2().ok_or_else(|| Error::Shape {
            op: "slice_rows",
            message: alloc::format!("expected a matrix, got {:?}", t.shape()),
        })?;
        if len == 0 || start + len > r {
            return Err(Error::Shape {
                op: "slice_rows",
                message: alloc::format!("range {start}..{} outside {r} rows", start + len),
            });
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::from_parts(vec![len, c], data);
        Ok(self.push_op(Op::SliceRows(start), vec![a.0], out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push_op(Op::Reshape, vec![a.0], out))
    }

    /// Repeats a `1×n` row `m` times into an `m×n` matrix.
    pub fn tile_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let t = self.value(a);
        if m == 0 || !matches!(t.dims2(), Some((1, _))) {
            return Err(Error::Shape {
                op: "tile_rows",
                message: alloc::format!("cannot tile {:?} {m} times", t.shape()),
            });
        }
        let n = t.len();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.push_op(Op::TileRows, vec![a.0], out))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, e) = t.dims2().ok_or_else(|| Error::Shape {
            op: "gather_rows",
            message: alloc::format!("expected a matrix, got {:?}", t.shape()),
        })?;
        if ids.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::Vocabulary { id, size: v });
            }
            data.extend_from_slice(&t.data()[id * e..(id + 1) * e]);
        }
        let out = Tensor::from_parts(vec![ids.len(), e], data);
        Ok(self.push_op(Op::Gather(ids.to_vec()), vec![table.0], out))
    }

    // ---- convolutional ----

    /// Stride-1 zero-padded ("same") convolution of an `H×W×Cin` image with a
    /// `k×k×Cin×Cout` kernel (odd `k`) and a `Cout` bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(kernel), self.value(bias));
        let geom = match (tx.shape(), tw.shape()) {
            (&[h, w, cin], &[k, k2, cin2, cout]) if k == k2 && k % 2 == 1 && cin == cin2 => ConvGeom {
                height: h,
                width: w,
                cin,
                cout,
                k,
            },
            _ => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    lhs: tx.shape().to_vec(),
                    rhs: tw.shape().to_vec(),
                })
            }
        };
        if tb.len() != geom.cout {
            return Err(Error::Dimension {
                op: "conv2d bias",
                lhs: tw.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); geom.height * geom.width * geom.cout];
        kernels::conv2d_forward(geom, tx.data(), tw.data(), tb.data(), &mut out);
        let out = Tensor::from_parts(vec![geom.height, geom.width, geom.cout], out);
        Ok(self.push_op(Op::Conv2d(geom), vec![x.0, kernel.0, bias.0], out))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (h, w, c) = match t.shape() {
            &[h, w, c] if h >= 2 && w >= 2 => (h, w, c),
            s => {
                return Err(Error::Shape {
                    op: "max_pool2",
                    message: alloc::format!("expected H×W×C with H, W ≥ 2, got {s:?}"),
                })
            }
        };
        let (oh, ow) = (h / 2, w / 2);
        let src = t.data();
        let mut out = Vec::with_capacity(oh * ow * c);
        let mut argmax = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let mut best = (2 * y * w + 2 * x) * c + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((2 * y + dy) * w + 2 * x + dx) * c + ch;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![oh, ow, c], out);
        Ok(self.push_op(Op::MaxPool2(argmax), vec![x.0], out))
    }

    /// Mean of each channel of an `H×W×C` map, as a `1×C` row.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = match t.shape() {
            &[_, _, c] => c,
            s => {
                return Err(Error::Shape {
                    op: "global_avg_pool",
                    message: alloc::format!("expected H×W×C, got {s:?}"),
                })
            }
        };
        let mut acc = vec![T::zero(); c];
        for px in t.data().chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a = *a + v;
            }
        }
        let count = T::lit((t.len() / c) as f64);
        for a in acc.iter_mut() {
            *a = *a / count;
        }
        Ok(self.push_op(Op::GlobalAvgPool, vec![x.0], Tensor::row(acc)))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        Some(Broadcast::Same)
    } else if numel(a) == 1 {
        Some(Broadcast::LhsScalar)
    } else if numel(b) == 1 {
        Some(Broadcast::RhsScalar)
    } else {
        match (a, b) {
            (&[1, n], &[_, n2]) if n == n2 => Some(Broadcast::LhsRow),
            (&[_, n], &[1, n2]) if n == n2 => Some(Broadcast::RhsRow),
            _ => None,
        }
    }
}
