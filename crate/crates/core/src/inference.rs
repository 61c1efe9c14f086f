//! Forward-only kernels for passes that need no gradients. Each mirrors the
//! recorded graph op sequence operation for operation, so both routes give
//! identical values. Outputs go into caller-owned buffers so the step loop
//! does not allocate.

use crate::numerics::Matrix;
use crate::plastic::PlasticLayerState;
use crate::scalar::Scalar;

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `out = m v`.
pub(crate) fn matvec_into<T: Scalar>(m: &Matrix<T>, v: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(m.data().chunks_exact(m.cols()).map(|row| dot(row, v)));
}

/// `out = m^T v`.
pub(crate) fn mat_t_vec_into<T: Scalar>(m: &Matrix<T>, v: &[T], out: &mut Vec<T>) {
    out.clear();
    out.resize(m.cols(), T::zero());
    for (row, &vi) in m.data().chunks_exact(m.cols()).zip(v) {
        for (o, &a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().fold(T::neg_infinity(), |m, &x| m.larger(x));
    v.iter_mut().for_each(|x| *x = (*x - max).exp());
    let total: T = v.iter().copied().sum();
    v.iter_mut().for_each(|x| *x = *x / total);
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LstmCell<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
    pre: Vec<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn zeros(k: usize) -> Self {
        Self {
            h: vec![T::zero(); k],
            c: vec![T::zero(); k],
            pre: Vec::with_capacity(4 * k),
        }
    }

    /// Gate rows are ordered input, forget, candidate, output.
    pub fn step(&mut self, (w_ih, w_hh, b): (&Matrix<T>, &Matrix<T>, &Matrix<T>), x: &[T]) {
        let Self { h, c, pre } = self;
        let k = h.len();
        pre.clear();
        let rows = w_ih
            .data()
            .chunks_exact(w_ih.cols())
            .zip(w_hh.data().chunks_exact(w_hh.cols()))
            .zip(b.data());
        pre.extend(rows.map(|((rx, rh), &bias)| dot(rx, x) + dot(rh, h) + bias));
        for j in 0..k {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[k + j]);
            let cand = pre[2 * k + j].tanh();
            let o = sigmoid(pre[3 * k + j]);
            c[j] = f * c[j] + i * cand;
            h[j] = o * c[j].tanh();
        }
    }
}

/// Plastic layer step: advance the trace from the stored pair, then
/// `y = tanh((w + alpha * hebb)^T x)`.
pub(crate) fn plastic_step<T: Scalar>(
    w: &Matrix<T>,
    alpha: &Matrix<T>,
    state: &mut PlasticLayerState<T>,
    x: &[T],
    eta: T,
    y: &mut Vec<T>,
) {
    let cols = w.cols();
    y.clear();
    y.resize(cols, T::zero());
    let prev = state.prev_in.as_deref().zip(state.prev_out.as_deref());
    let rows = w
        .data()
        .chunks_exact(cols)
        .zip(alpha.data().chunks_exact(cols))
        .zip(state.hebb.data_mut().chunks_exact_mut(cols))
        .zip(x)
        .enumerate();
    for (i, (((wr, ar), hr), &xi)) in rows {
        if let Some((pre, post)) = prev {
            let a = pre[i];
            for (h, &b) in hr.iter_mut().zip(post) {
                *h += eta * b * (a - b * *h);
            }
        }
        for (((o, &wv), &av), &hv) in y.iter_mut().zip(wr).zip(ar).zip(hr.iter()) {
            *o += (wv + av * hv) * xi;
        }
    }
    y.iter_mut().for_each(|v| *v = v.tanh());
    let keep = |slot: &mut Option<Vec<T>>, v: &[T]| match slot {
        Some(buf) => {
            buf.clear();
            buf.extend_from_slice(v);
        }
        None => *slot = Some(v.to_vec()),
    };
    keep(&mut state.prev_in, x);
    keep(&mut state.prev_out, y);
}

/// `z = softmax(stack q)`.
pub(crate) fn attend_into<T: Scalar>(q: &[T], stack: &Matrix<T>, z: &mut Vec<T>) {
    matvec_into(stack, q, z);
    softmax_in_place(z);
}

/// In-place [`crate::numerics::slot_blend`].
pub(crate) fn blend<T: Scalar>(stack: &mut Matrix<T>, z: &[T], update: &[T]) {
    let cols = stack.cols();
    for (row, &w) in stack.data_mut().chunks_exact_mut(cols).zip(z) {
        for (x, &u) in row.iter_mut().zip(update) {
            *x = (T::one() - w) * *x + w * u;
        }
    }
}
