//! LSTM cell and the two-layer encoder stack.
//!
//! Gate blocks are stacked row-wise in the fixed order
//! input, forget, candidate, output; `w_ih` is `4k x d`, `w_hh` is `4k x k`
//! and `b` is `4k x 1`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, ParamId, ParameterTape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = f64> {
    pub w_ih: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub b: Matrix<T>,
}

impl<T: Scalar> LstmParams<T> {
    /// Weights `U(-1/sqrt(k), 1/sqrt(k))`, forget-gate bias 1, other biases 0.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut b = Matrix::zeros(4 * hidden, 1);
        for j in hidden..2 * hidden {
            b.set(j, 0, T::one());
        }
        Self {
            w_ih: Matrix::random_uniform(4 * hidden, input_dim, -bound, bound, rng),
            w_hh: Matrix::random_uniform(4 * hidden, hidden, -bound, bound, rng),
            b,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(4 * hidden, input_dim),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    fn validate(&self) -> Result<()> {
        let k = self.hidden();
        if self.w_hh.rows() != 4 * k || self.w_ih.rows() != 4 * k || self.b.shape() != (4 * k, 1) {
            return Err(Error::invalid("inconsistent LSTM gate block shapes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T = f64> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TracedLstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl TracedLstmState {
    pub fn attach<T: Scalar>(g: &mut Graph<T>, state: &LstmState<T>) -> Self {
        Self {
            h: g.input(&state.h),
            c: g.input(&state.c),
        }
    }

    pub fn detach<T: Scalar>(&self, g: &Graph<T>) -> LstmState<T> {
        LstmState {
            h: g.vector(self.h).to_vec(),
            c: g.vector(self.c).to_vec(),
        }
    }
}

/// Record one LSTM step; returns the new hidden state node.
pub fn record_lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    w_ih: NodeId,
    w_hh: NodeId,
    b: NodeId,
    state: &mut TracedLstmState,
    x: NodeId,
    hidden: usize,
) -> NodeId {
    let from_x = g.matvec(w_ih, x);
    let from_h = g.matvec(w_hh, state.h);
    let summed = g.add(from_x, from_h);
    let pre = g.add(summed, b);

    let i_pre = g.slice(pre, 0, hidden);
    let f_pre = g.slice(pre, hidden, hidden);
    let g_pre = g.slice(pre, 2 * hidden, hidden);
    let o_pre = g.slice(pre, 3 * hidden, hidden);
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let cand = g.tanh(g_pre);
    let o = g.sigmoid(o_pre);

    let keep = g.mul(f, state.c);
    let write = g.mul(i, cand);
    let c = g.add(keep, write);
    let squashed = g.tanh(c);
    let h = g.mul(o, squashed);
    state.h = h;
    state.c = c;
    h
}

fn check_input<T: Scalar>(x: &[T], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::invalid(format!("LSTM expects input dim {d}, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite LSTM input"));
    }
    Ok(())
}

/// One LSTM step on plain values.
pub fn lstm_step<T: Scalar>(
    params: &LstmParams<T>,
    state: &LstmState<T>,
    x: &[T],
) -> Result<(Vec<T>, LstmState<T>)> {
    params.validate()?;
    check_input(x, params.input_dim())?;
    let k = params.hidden();
    if state.h.len() != k || state.c.len() != k {
        return Err(Error::invalid(format!("LSTM state must have dim {k}")));
    }
    let mut g = Graph::new();
    let (w_ih, w_hh, b) = (
        g.constant(params.w_ih.clone()),
        g.constant(params.w_hh.clone()),
        g.constant(params.b.clone()),
    );
    let mut traced = TracedLstmState::attach(&mut g, state);
    let xin = g.input(x);
    let h = record_lstm_step(&mut g, w_ih, w_hh, b, &mut traced, xin, k);
    Ok((g.vector(h).to_vec(), traced.detach(&g)))
}

/// Run a two-layer stack over a sequence from zero initial states and
/// return the second layer's hidden state at every step.
pub fn encode_sequence<T: Scalar>(stack: &[LstmParams<T>; 2], inputs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    if inputs.is_empty() {
        return Err(Error::invalid("cannot encode an empty sequence"));
    }
    if stack[1].input_dim() != stack[0].hidden() {
        return Err(Error::invalid("encoder layer dimensions do not chain"));
    }
    let mut s1 = LstmState::zeros(stack[0].hidden());
    let mut s2 = LstmState::zeros(stack[1].hidden());
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (h1, n1) = lstm_step(&stack[0], &s1, x)?;
        let (h2, n2) = lstm_step(&stack[1], &s2, &h1)?;
        s1 = n1;
        s2 = n2;
        out.push(h2);
    }
    Ok(out)
}

/// LSTM layer backed by a [`ParameterTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        tape: &mut ParameterTape<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let init = LstmParams::<T>::random(input_dim, hidden, rng);
        Ok(Self {
            w_ih: tape.register(format!("{prefix}.w_ih"), init.w_ih)?,
            w_hh: tape.register(format!("{prefix}.w_hh"), init.w_hh)?,
            b: tape.register(format!("{prefix}.b"), init.b)?,
            input_dim,
            hidden,
        })
    }

    pub fn params<T: Scalar>(&self, tape: &ParameterTape<T>) -> LstmParams<T> {
        LstmParams {
            w_ih: tape.value(self.w_ih).clone(),
            w_hh: tape.value(self.w_hh).clone(),
            b: tape.value(self.b).clone(),
        }
    }

    pub fn record_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        tape: &ParameterTape<T>,
        state: &mut TracedLstmState,
        x: NodeId,
    ) -> NodeId {
        let w_ih = g.param(tape, self.w_ih);
        let w_hh = g.param(tape, self.w_hh);
        let b = g.param(tape, self.b);
        record_lstm_step(g, w_ih, w_hh, b, state, x, self.hidden)
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<T>) -> TracedLstmState {
        TracedLstmState::attach(g, &LstmState::zeros(self.hidden))
    }
}

/// Two stacked LSTM layers, both with hidden size `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub layers: [LstmLayer; 2],
}

impl Encoder {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        tape: &mut ParameterTape<T>,
        input_dim: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let first = LstmLayer::register(tape, "enc1", input_dim, k, rng)?;
        let second = LstmLayer::register(tape, "enc2", k, k, rng)?;
        Ok(Self {
            layers: [first, second],
        })
    }

    pub fn params<T: Scalar>(&self, tape: &ParameterTape<T>) -> [LstmParams<T>; 2] {
        [self.layers[0].params(tape), self.layers[1].params(tape)]
    }

    /// Record the stack over all inputs from zero states.
    pub fn record<T: Scalar>(&self, g: &mut Graph<T>, tape: &ParameterTape<T>, inputs: &[NodeId]) -> Vec<NodeId> {
        let mut s1 = self.layers[0].zero_state(g);
        let mut s2 = self.layers[1].zero_state(g);
        inputs
            .iter()
            .map(|&x| {
                let h1 = self.layers[0].record_step(g, tape, &mut s1, x);
                self.layers[1].record_step(g, tape, &mut s2, h1)
            })
            .collect()
    }
}
