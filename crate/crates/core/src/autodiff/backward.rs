use alloc::vec;
use alloc::vec::Vec;

use super::kernels;
use super::{BackwardStats, Binary, Graph, Node, Op, Unary, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Graph<'_, T> {
    /// Populates gradients of `loss` for every reachable node that requires
    /// one. Gradients from fan-out accumulate additively. The tape can be
    /// consumed only once.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.value(loss).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(shape));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::ones(&shape));

        let mut local_gradients = 0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            local_gradients += 1;
            propagate(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(BackwardStats { local_gradients })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], j: usize, t: Tensor<T>) {
    match &mut grads[j] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Sums an output-shaped gradient down to the (possibly broadcast) shape of
/// the input it flows into.
fn reduce_to<T: Scalar>(full: Vec<T>, out_shape: &[usize], input: &Tensor<T>) -> Tensor<T> {
    if input.len() == full.len() {
        return Tensor::from_parts(input.shape().to_vec(), full);
    }
    if input.len() == 1 {
        return Tensor::from_parts(input.shape().to_vec(), vec![full.iter().copied().sum()]);
    }
    let n = out_shape[1];
    let mut acc = vec![T::zero(); n];
    for row in full.chunks_exact(n) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    Tensor::from_parts(input.shape().to_vec(), acc)
}

#[inline]
fn broadcast_at<T: Scalar>(t: &Tensor<T>, i: usize) -> T {
    let d = t.data();
    d[i % d.len()]
}

fn propagate<T: Scalar>(nodes: &[Node<'_, T>], grads: &mut [Option<Tensor<T>>], i: usize, g: &Tensor<T>) {
    let node = &nodes[i];
    let ins = &node.inputs;
    let out = node.value.get();
    let input = |k: usize| nodes[ins[k]].value.get();
    let wants = |k: usize| nodes[ins[k]].requires_grad;

    match &node.op {
        Op::Leaf => {}
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = a.dims2().unwrap();
            let n = b.dims2().unwrap().1;
            if wants(0) {
                let mut da = vec![T::zero(); m * k];
                kernels::matmul_nt_acc(g.data(), b.data(), &mut da, m, k, n);
                accumulate(grads, ins[0], Tensor::from_parts(vec![m, k], da));
            }
            if wants(1) {
                let mut db = vec![T::zero(); k * n];
                kernels::matmul_tn_acc(a.data(), g.data(), &mut db, m, k, n);
                accumulate(grads, ins[1], Tensor::from_parts(vec![k, n], db));
            }
        }
        Op::Binary(op) => {
            let (a, b) = (input(0), input(1));
            let gd = g.data();
            for (side, &id) in ins.iter().enumerate().take(2) {
                if !wants(side) {
                    continue;
                }
                let full: Vec<T> = match (op, side) {
                    (Binary::Add, _) | (Binary::Sub, 0) => gd.to_vec(),
                    (Binary::Sub, _) => gd.iter().map(|&v| -v).collect(),
                    (Binary::Mul, 0) => gd.iter().enumerate().map(|(j, &v)| v * broadcast_at(b, j)).collect(),
                    (Binary::Mul, _) => gd.iter().enumerate().map(|(j, &v)| v * broadcast_at(a, j)).collect(),
                };
                let target = if side == 0 { a } else { b };
                accumulate(grads, id, reduce_to(full, out.shape(), target));
            }
        }
        Op::Unary(op) => {
            if !wants(0) {
                return;
            }
            let x = input(0);
            let it = g.data().iter().zip(x.data()).zip(out.data());
            let d: Vec<T> = match op {
                Unary::Tanh => it.map(|((&g, _), &y)| g * (T::one() - y * y)).collect(),
                // relu'(0) := 0
                Unary::Relu => it
                    .map(|((&g, &x), _)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
                Unary::Sigmoid => it.map(|((&g, _), &y)| g * y * (T::one() - y)).collect(),
                Unary::Log => it.map(|((&g, &x), _)| g / x).collect(),
                Unary::Exp => it.map(|((&g, _), &y)| g * y).collect(),
            };
            accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::Scale(f) => {
            if wants(0) {
                let s = T::lit(*f);
                accumulate(grads, ins[0], g.map(|v| v * s));
            }
        }
        Op::Clamp(lo, hi) => {
            if wants(0) {
                let (lo, hi) = (T::lit(*lo), T::lit(*hi));
                let x = input(0);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
                    .collect();
                accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
            }
        }
        Op::Softmax => {
            if !wants(0) {
                return;
            }
            let n = out.dims2().unwrap().1;
            let mut d = Vec::with_capacity(out.len());
            for (y, gr) in out.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                let dot: T = y.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                d.extend(y.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
            }
            accumulate(grads, ins[0], Tensor::from_parts(out.shape().to_vec(), d));
        }
        Op::Concat => {
            let mut offset = 0;
            for (k, &j) in ins.iter().enumerate() {
                let part = input(k);
                let n = part.len();
                if wants(k) {
                    let piece = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, j, Tensor::from_parts(part.shape().to_vec(), piece));
                }
                offset += n;
            }
        }
        Op::StackRows => {
            let n = out.dims2().unwrap().1;
            for (k, &j) in ins.iter().enumerate() {
                if wants(k) {
                    let piece = g.data()[k * n..(k + 1) * n].to_vec();
                    accumulate(grads, j, Tensor::from_parts(vec![1, n], piece));
                }
            }
        }
        Op::SliceCols(start) => {
            if !wants(0) {
                return;
            }
            let x = input(0);
            let c = x.dims2().unwrap().1;
            let len = out.dims2().unwrap().1;
            let mut d = vec![T::zero(); x.len()];
            for (dst, src) in d.chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
                dst[*start..*start + len].copy_from_slice(src);
            }
            accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::SliceRows(start) => {
            if !wants(0) {
                return;
            }
            let x = input(0);
            let c = x.dims2().unwrap().1;
            let mut d = vec![T::zero(); x.len()];
            d[start * c..start * c + g.len()].copy_from_slice(g.data());
            accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::Reshape => {
            if wants(0) {
                let x = input(0);
                accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), g.data().to_vec()));
            }
        }
        Op::TileRows => {
            if wants(0) {
                let x = input(0);
                accumulate(grads, ins[0], reduce_to(g.data().to_vec(), out.shape(), x));
            }
        }
        Op::Sum => {
            if wants(0) {
                let x = input(0);
                accumulate(grads, ins[0], Tensor::full(x.shape(), g.data()[0]));
            }
        }
        Op::Gather(ids) => {
            if !wants(0) {
                return;
            }
            let table = input(0);
            let e = table.dims2().unwrap().1;
            let mut d = vec![T::zero(); table.len()];
            for (row, &id) in g.data().chunks_exact(e).zip(ids) {
                for (dst, &v) in d[id * e..(id + 1) * e].iter_mut().zip(row) {
                    *dst = *dst + v;
                }
            }
            accumulate(grads, ins[0], Tensor::from_parts(table.shape().to_vec(), d));
        }
        Op::Conv2d(geom) => {
            let (x, w, b) = (input(0), input(1), input(2));
            let mut gw = vec![T::zero(); w.len()];
            let mut gb = vec![T::zero(); b.len()];
            let mut gx = wants(0).then(|| vec![T::zero(); x.len()]);
            kernels::conv2d_backward(*geom, x.data(), w.data(), g.data(), &mut gw, &mut gb, gx.as_deref_mut());
            if let Some(gx) = gx {
                accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), gx));
            }
            if wants(1) {
                accumulate(grads, ins[1], Tensor::from_parts(w.shape().to_vec(), gw));
            }
            if wants(2) {
                accumulate(grads, ins[2], Tensor::from_parts(b.shape().to_vec(), gb));
            }
        }
        Op::MaxPool2(argmax) => {
            if !wants(0) {
                return;
            }
            let x = input(0);
            let mut d = vec![T::zero(); x.len()];
            for (&src, &v) in argmax.iter().zip(g.data()) {
                d[src] = d[src] + v;
            }
            accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
        }
        Op::GlobalAvgPool => {
            if !wants(0) {
                return;
            }
            let x = input(0);
            let c = g.len();
            let inv = T::one() / T::lit((x.len() / c) as f64);
            let mut d = Vec::with_capacity(x.len());
            for _ in 0..x.len() / c {
                d.extend(g.data().iter().map(|&v| v * inv));
            }
            accumulate(grads, ins[0], Tensor::from_parts(x.shape().to_vec(), d));
        }
    }
}
