//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every forward computation in the crate is expressed as a sequence of
//! [`Graph`] operations. Values are computed eagerly as nodes are pushed, so
//! the same code path serves inference (graph dropped afterwards) and
//! training ([`Graph::backward`] replays the record in reverse).
//!
//! Leaves are either constants (inputs, detached state) or parameters pulled
//! from a [`ParameterTape`]. A parameter is materialised once per graph, so
//! gradients from every use accumulate into the same leaf.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParameterTape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatVec(NodeId, NodeId),
    MatTVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Slice { src: NodeId, start: usize },
    Softmax(NodeId),
    Sum(NodeId),
    Oja { trace: NodeId, pre: NodeId, post: NodeId, rate: T },
    SlotBlend { stack: NodeId, weights: NodeId, update: NodeId },
    NegLogPick { probs: NodeId, index: usize, floor: T },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    needs_grad: bool,
}

/// Oja-style Hebbian update,
/// `trace'[i][j] = trace[i][j] + rate * post[j] * (pre[i] - post[j] * trace[i][j])`.
pub fn oja_update<T: Scalar>(trace: &Matrix<T>, pre: &[T], post: &[T], rate: T) -> Matrix<T> {
    assert_eq!(trace.rows(), pre.len());
    assert_eq!(trace.cols(), post.len());
    let mut out = trace.clone();
    let cols = trace.cols();
    for (i, row) in out.data_mut().chunks_exact_mut(cols).enumerate() {
        let a = pre[i];
        for (h, &b) in row.iter_mut().zip(post) {
            *h += rate * b * (a - b * *h);
        }
    }
    out
}

/// Per-slot convex blend `stack'[s,:] = (1 - w[s]) stack[s,:] + w[s] update`.
pub fn slot_blend<T: Scalar>(stack: &Matrix<T>, weights: &[T], update: &[T]) -> Matrix<T> {
    assert_eq!(stack.rows(), weights.len());
    assert_eq!(stack.cols(), update.len());
    let mut out = stack.clone();
    let cols = stack.cols();
    for (row, &w) in out.data_mut().chunks_exact_mut(cols).zip(weights) {
        for (x, &u) in row.iter_mut().zip(update) {
            *x = (T::one() - w) * *x + w * u;
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T = f64> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<NodeId>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    /// Node value as a flat slice (vectors are `n x 1`).
    pub fn vector(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    pub fn scalar(&self, id: NodeId) -> T {
        let v = &self.nodes[id.0].value;
        assert_eq!(v.len(), 1, "node is not a scalar");
        v.data()[0]
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Constant column vector.
    pub fn input(&mut self, values: &[T]) -> NodeId {
        self.constant(Matrix::column(values))
    }

    /// Leaf for a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, tape: &ParameterTape<T>, id: ParamId) -> NodeId {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(node) = self.params[id.0] {
            return node;
        }
        let node = self.push(Op::Param(id), tape.value(id).clone(), true);
        self.params[id.0] = Some(node);
        node
    }

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let out = self.value(m).matvec(self.vector(v));
        let g = self.grad_any(&[m, v]);
        self.push(Op::MatVec(m, v), Matrix::column(&out), g)
    }

    /// `m^T v`.
    pub fn mat_t_vec(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let out = self.value(m).mat_t_vec(self.vector(v));
        let g = self.grad_any(&[m, v]);
        self.push(Op::MatTVec(m, v), Matrix::column(&out), g)
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::new(va.rows(), va.cols(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y);
        let g = self.grad_any(&[a, b]);
        self.push(Op::Add(a, b), v, g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y);
        let g = self.grad_any(&[a, b]);
        self.push(Op::Sub(a, b), v, g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y);
        let g = self.grad_any(&[a, b]);
        self.push(Op::Mul(a, b), v, g)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let g = self.grad_any(&[a]);
        self.push(Op::Scale(a, c), v, g)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        let g = self.grad_any(&[a]);
        self.push(Op::Tanh(a), v, g)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        let g = self.grad_any(&[a]);
        self.push(Op::Sigmoid(a), v, g)
    }

    /// Contiguous segment `[start, start + len)` of a vector.
    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = Matrix::column(&self.vector(src)[start..start + len]);
        let g = self.grad_any(&[src]);
        self.push(Op::Slice { src, start }, v, g)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let p = crate::numerics::softmax_unchecked(self.vector(a));
        let g = self.grad_any(&[a]);
        self.push(Op::Softmax(a), Matrix::column(&p), g)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: T = self.value(a).data().iter().copied().sum();
        let g = self.grad_any(&[a]);
        self.push(Op::Sum(a), Matrix::scalar(s), g)
    }

    /// Recorded [`oja_update`].
    pub fn oja(&mut self, trace: NodeId, pre: NodeId, post: NodeId, rate: T) -> NodeId {
        let v = oja_update(self.value(trace), self.vector(pre), self.vector(post), rate);
        let g = self.grad_any(&[trace, pre, post]);
        self.push(Op::Oja { trace, pre, post, rate }, v, g)
    }

    /// Recorded [`slot_blend`].
    pub fn slot_blend(&mut self, stack: NodeId, weights: NodeId, update: NodeId) -> NodeId {
        let v = slot_blend(self.value(stack), self.vector(weights), self.vector(update));
        let g = self.grad_any(&[stack, weights, update]);
        self.push(Op::SlotBlend { stack, weights, update }, v, g)
    }

    /// `-ln(max(probs[index], floor))`.
    pub fn neg_log_pick(&mut self, probs: NodeId, index: usize, floor: T) -> NodeId {
        let p = self.vector(probs)[index];
        // `max` would swallow a NaN probability.
        let v = if p.is_nan() { p } else { -(p.larger(floor)).ln() };
        let g = self.grad_any(&[probs]);
        self.push(Op::NegLogPick { probs, index, floor }, Matrix::scalar(v), g)
    }

    /// Zero the tape's gradients, then write `d loss / d param` for every
    /// parameter reached by the recorded forward pass.
    pub fn backward(&self, loss: NodeId, tape: &mut ParameterTape<T>) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::state("backward called without a recorded forward pass"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward requires a scalar loss node"));
        }
        tape.zero_grads();
        self.accumulate_into(loss, tape);
        tape.mark_grads_ready();
        Ok(())
    }

    fn accumulate_into(&self, loss: NodeId, tape: &mut ParameterTape<T>) {
        let mut adj: Vec<Option<Matrix<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    for (d, &x) in tape.grad_mut(pid).data_mut().iter_mut().zip(g.data()) {
                        *d += x;
                    }
                }
                Op::MatVec(m, v) => {
                    let (mv, vv) = (self.value(m), self.vector(v));
                    let gd = g.data();
                    if self.nodes[m.0].needs_grad {
                        let cols = mv.cols();
                        let acc = slot(&mut adj, m, mv);
                        for (row, &gr) in acc.data_mut().chunks_exact_mut(cols).zip(gd) {
                            for (a, &x) in row.iter_mut().zip(vv) {
                                *a += gr * x;
                            }
                        }
                    }
                    if self.nodes[v.0].needs_grad {
                        let contrib = mv.mat_t_vec(gd);
                        add_slice(slot(&mut adj, v, self.value(v)), &contrib);
                    }
                }
                Op::MatTVec(m, v) => {
                    let (mv, vv) = (self.value(m), self.vector(v));
                    let gd = g.data();
                    if self.nodes[m.0].needs_grad {
                        let cols = mv.cols();
                        let acc = slot(&mut adj, m, mv);
                        for (row, &vr) in acc.data_mut().chunks_exact_mut(cols).zip(vv) {
                            for (a, &gc) in row.iter_mut().zip(gd) {
                                *a += vr * gc;
                            }
                        }
                    }
                    if self.nodes[v.0].needs_grad {
                        let contrib = mv.matvec(gd);
                        add_slice(slot(&mut adj, v, self.value(v)), &contrib);
                    }
                }
                Op::Add(a, b) => {
                    for p in [a, b] {
                        if self.nodes[p.0].needs_grad {
                            add_slice(slot(&mut adj, p, self.value(p)), g.data());
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        add_slice(slot(&mut adj, a, self.value(a)), g.data());
                    }
                    if self.nodes[b.0].needs_grad {
                        let acc = slot(&mut adj, b, self.value(b));
                        for (d, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                            *d -= x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (p, other) in [(a, b), (b, a)] {
                        if self.nodes[p.0].needs_grad {
                            let ov = self.value(other).data();
                            let acc = slot(&mut adj, p, self.value(p));
                            for ((d, &x), &o) in acc.data_mut().iter_mut().zip(g.data()).zip(ov) {
                                *d += x * o;
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let acc = slot(&mut adj, a, self.value(a));
                    for (d, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *d += x * c;
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let acc = slot(&mut adj, a, self.value(a));
                    for ((d, &x), &yi) in acc.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *d += x * (T::one() - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let acc = slot(&mut adj, a, self.value(a));
                    for ((d, &x), &yi) in acc.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *d += x * yi * (T::one() - yi);
                    }
                }
                Op::Slice { src, start } => {
                    let acc = slot(&mut adj, src, self.value(src));
                    for (d, &x) in acc.data_mut()[start..].iter_mut().zip(g.data()) {
                        *d += x;
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let dot: T = y.iter().zip(g.data()).map(|(&p, &x)| p * x).sum();
                    let acc = slot(&mut adj, a, self.value(a));
                    for ((d, &x), &p) in acc.data_mut().iter_mut().zip(g.data()).zip(y) {
                        *d += p * (x - dot);
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    for d in slot(&mut adj, a, self.value(a)).data_mut() {
                        *d += s;
                    }
                }
                Op::Oja { trace, pre, post, rate } => {
                    self.oja_backward(&mut adj, &g, trace, pre, post, rate);
                }
                Op::SlotBlend { stack, weights, update } => {
                    self.blend_backward(&mut adj, &g, stack, weights, update);
                }
                Op::NegLogPick { probs, index, floor } => {
                    let p = self.vector(probs)[index];
                    if p > floor || p.is_nan() {
                        let acc = slot(&mut adj, probs, self.value(probs));
                        acc.data_mut()[index] -= g.data()[0] / p;
                    }
                }
            }
        }
    }

    fn oja_backward(
        &self,
        adj: &mut [Option<Matrix<T>>],
        g: &Matrix<T>,
        trace: NodeId,
        pre: NodeId,
        post: NodeId,
        rate: T,
    ) {
        let h = self.value(trace);
        let a = self.vector(pre);
        let b = self.vector(post);
        let cols = h.cols();
        if self.nodes[trace.0].needs_grad {
            let acc = slot(adj, trace, h);
            for (row_acc, row_g) in acc.data_mut().chunks_exact_mut(cols).zip(g.data().chunks_exact(cols)) {
                for ((d, &x), &bj) in row_acc.iter_mut().zip(row_g).zip(b) {
                    *d += x * (T::one() - rate * bj * bj);
                }
            }
        }
        if self.nodes[pre.0].needs_grad {
            let contrib: Vec<T> = g
                .data()
                .chunks_exact(cols)
                .map(|row_g| row_g.iter().zip(b).map(|(&x, &bj)| x * rate * bj).sum())
                .collect();
            add_slice(slot(adj, pre, self.value(pre)), &contrib);
        }
        if self.nodes[post.0].needs_grad {
            let mut contrib = vec![T::zero(); cols];
            let two = T::one() + T::one();
            for ((row_g, row_h), &ai) in g.data().chunks_exact(cols).zip(h.data().chunks_exact(cols)).zip(a) {
                for (((c, &x), &hij), &bj) in contrib.iter_mut().zip(row_g).zip(row_h).zip(b) {
                    *c += x * rate * (ai - two * bj * hij);
                }
            }
            add_slice(slot(adj, post, self.value(post)), &contrib);
        }
    }

    fn blend_backward(
        &self,
        adj: &mut [Option<Matrix<T>>],
        g: &Matrix<T>,
        stack: NodeId,
        weights: NodeId,
        update: NodeId,
    ) {
        let m = self.value(stack);
        let z = self.vector(weights);
        let u = self.vector(update);
        let cols = m.cols();
        if self.nodes[stack.0].needs_grad {
            let acc = slot(adj, stack, m);
            for ((row_acc, row_g), &zs) in acc.data_mut().chunks_exact_mut(cols).zip(g.data().chunks_exact(cols)).zip(z) {
                for (d, &x) in row_acc.iter_mut().zip(row_g) {
                    *d += x * (T::one() - zs);
                }
            }
        }
        if self.nodes[weights.0].needs_grad {
            let contrib: Vec<T> = g
                .data()
                .chunks_exact(cols)
                .zip(m.data().chunks_exact(cols))
                .map(|(row_g, row_m)| {
                    row_g.iter().zip(row_m).zip(u).map(|((&x, &mv), &uc)| x * (uc - mv)).sum()
                })
                .collect();
            add_slice(slot(adj, weights, self.value(weights)), &contrib);
        }
        if self.nodes[update.0].needs_grad {
            let mut contrib = vec![T::zero(); cols];
            for (row_g, &zs) in g.data().chunks_exact(cols).zip(z) {
                for (c, &x) in contrib.iter_mut().zip(row_g) {
                    *c += zs * x;
                }
            }
            add_slice(slot(adj, update, self.value(update)), &contrib);
        }
    }
}

fn slot<'a, T: Scalar>(adj: &'a mut [Option<Matrix<T>>], id: NodeId, like: &Matrix<T>) -> &'a mut Matrix<T> {
    adj[id.0].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}

fn add_slice<T: Scalar>(acc: &mut Matrix<T>, contrib: &[T]) {
    for (d, &x) in acc.data_mut().iter_mut().zip(contrib) {
        *d += x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_with(name: &str, m: Matrix<f64>) -> (ParameterTape<f64>, ParamId) {
        let mut tape = ParameterTape::new();
        let id = tape.register(name, m).unwrap();
        (tape, id)
    }

    #[test]
    fn linear_sum_gradient_is_input_per_row() {
        let (mut tape, id) = tape_with("w", Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64));
        let mut g = Graph::new();
        let w = g.param(&tape, id);
        let x = g.input(&[0.5, -2.0]);
        let y = g.matvec(w, x);
        let loss = g.sum(y);
        g.backward(loss, &mut tape).unwrap();
        for r in 0..3 {
            assert_eq!(tape.grad(id).row(r), &[0.5, -2.0]);
        }
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let (mut tape, id) = tape_with("w", Matrix::scalar(0.0));
        let mut g = Graph::new();
        let w = g.param(&tape, id);
        let x = g.input(&[1.0]);
        let y = g.matvec(w, x);
        let t = g.tanh(y);
        let loss = g.sum(t);
        g.backward(loss, &mut tape).unwrap();
        assert_eq!(tape.grad(id).data()[0], 1.0);
    }

    #[test]
    fn backward_on_empty_graph_is_state_error() {
        let (mut tape, _) = tape_with("w", Matrix::scalar(0.0));
        let g = Graph::<f64>::new();
        assert!(matches!(g.backward(NodeId(0), &mut tape), Err(Error::InvalidState(_))));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (mut tape, id) = tape_with("w", Matrix::zeros(2, 1));
        let mut g = Graph::new();
        let w = g.param(&tape, id);
        assert!(g.backward(w, &mut tape).is_err());
    }

    #[test]
    fn gradients_are_zeroed_between_passes() {
        let (mut tape, id) = tape_with("w", Matrix::scalar(2.0));
        for _ in 0..3 {
            let mut g = Graph::new();
            let w = g.param(&tape, id);
            let s = g.sum(w);
            g.backward(s, &mut tape).unwrap();
        }
        assert_eq!(tape.grad(id).data()[0], 1.0);
    }

    #[test]
    fn shared_parameter_accumulates() {
        let (mut tape, id) = tape_with("w", Matrix::scalar(3.0));
        let mut g = Graph::new();
        let w1 = g.param(&tape, id);
        let w2 = g.param(&tape, id);
        assert_eq!(w1, w2);
        let sq = g.mul(w1, w2);
        let loss = g.sum(sq);
        g.backward(loss, &mut tape).unwrap();
        assert_eq!(tape.grad(id).data()[0], 6.0);
    }

    #[test]
    fn oja_scalar_recurrence() {
        let mut h = Matrix::scalar(0.0f64);
        let expected = [0.5, 0.75, 0.875];
        for e in expected {
            h = oja_update(&h, &[1.0], &[1.0], 0.5);
            assert!((h.data()[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn blend_one_hot_overwrites_row() {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = slot_blend(&m, &[0.0, 1.0], &[9.0, 8.0]);
        assert_eq!(out.data(), &[1.0, 2.0, 9.0, 8.0]);
    }
}
