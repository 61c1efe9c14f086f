//! Differentiable-plasticity dense layer.
//!
//! Each connection `i -> j` carries a fixed weight `w[i][j]` and a Hebbian
//! trace `hebb[i][j]` gated by a trainable coefficient `alpha[i][j]`:
//!
//! ```text
//! y[j] = tanh( sum_i (w[i][j] + alpha[i][j] * hebb[i][j]) * x[i] )
//! hebb'[i][j] = hebb[i][j] + eta * y_prev[j] * (x_prev[i] - y_prev[j] * hebb[i][j])
//! ```
//!
//! Within one step the trace is advanced first, from the previous step's
//! stored (input, output) pair, and the output is then computed with the
//! advanced trace. The very first step after a reset has no stored pair and
//! leaves the trace untouched.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{oja_update, Graph, Matrix, NodeId, ParamId, ParameterTape};
use crate::scalar::Scalar;

/// Traces larger than this in magnitude are reported as diverging.
pub const TRACE_DIVERGENCE_LIMIT: f64 = 10.0;

/// Plain (non-registered) parameters of one plastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticLayerParams<T = f64> {
    pub w: Matrix<T>,
    pub alpha: Matrix<T>,
    pub eta: T,
}

impl<T: Scalar> PlasticLayerParams<T> {
    /// `w ~ U(-1/sqrt(k), 1/sqrt(k))`, `alpha ~ U(-0.01, 0.01)`.
    pub fn random<R: Rng + ?Sized>(k: usize, eta: T, rng: &mut R) -> Self {
        let bound = 1.0 / (k as f64).sqrt();
        Self {
            w: Matrix::random_uniform(k, k, -bound, bound, rng),
            alpha: Matrix::random_uniform(k, k, -0.01, 0.01, rng),
            eta,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }
}

/// Hebbian trace plus the activations of the previous step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticLayerState<T = f64> {
    pub hebb: Matrix<T>,
    pub prev_in: Option<Vec<T>>,
    pub prev_out: Option<Vec<T>>,
}

impl<T: Scalar> PlasticLayerState<T> {
    pub fn new(k: usize) -> Self {
        Self {
            hebb: Matrix::zeros(k, k),
            prev_in: None,
            prev_out: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> PlasticLayerState<U> {
        let widen = |v: &Vec<T>| v.iter().map(|x| U::of(x.as_f64())).collect();
        PlasticLayerState {
            hebb: self.hebb.cast(),
            prev_in: self.prev_in.as_ref().map(widen),
            prev_out: self.prev_out.as_ref().map(widen),
        }
    }

    pub fn reset(&mut self) {
        self.hebb.fill(T::zero());
        self.prev_in = None;
        self.prev_out = None;
    }

    fn check_shapes(&self) -> Result<()> {
        let (r, c) = self.hebb.shape();
        let bad_in = self.prev_in.as_ref().is_some_and(|v| v.len() != r);
        let bad_out = self.prev_out.as_ref().is_some_and(|v| v.len() != c);
        if bad_in || bad_out {
            return Err(Error::state(format!(
                "trace is {r}x{c} but activation buffers have lengths {:?}/{:?}",
                self.prev_in.as_ref().map(Vec::len),
                self.prev_out.as_ref().map(Vec::len)
            )));
        }
        Ok(())
    }

    /// Logs a warning when the trace magnitude exceeds
    /// [`TRACE_DIVERGENCE_LIMIT`]. Returns whether it did.
    pub fn check_divergence(&self, label: &str) -> bool {
        let m = self.hebb.max_abs().as_f64();
        let diverged = !(m <= TRACE_DIVERGENCE_LIMIT);
        if diverged {
            log::warn!("{label}: Hebbian trace magnitude {m:.3} exceeds {TRACE_DIVERGENCE_LIMIT}");
        }
        diverged
    }
}

/// One Oja step of the trace using the stored activations; a no-op when
/// the buffers are empty.
pub fn hebb_update<T: Scalar>(state: &PlasticLayerState<T>, eta: T) -> Result<Matrix<T>> {
    state.check_shapes()?;
    match (&state.prev_in, &state.prev_out) {
        (Some(pre), Some(post)) => Ok(oja_update(&state.hebb, pre, post, eta)),
        _ => Ok(state.hebb.clone()),
    }
}

/// Single plastic step on plain values.
pub fn plastic_forward<T: Scalar>(
    params: &PlasticLayerParams<T>,
    state: &PlasticLayerState<T>,
    x: &[T],
) -> Result<(Vec<T>, PlasticLayerState<T>)> {
    let k = params.dim();
    if x.len() != k {
        return Err(Error::invalid(format!("plastic layer expects {k} inputs, got {}", x.len())));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in plastic layer input"));
    }
    if state.hebb.shape() != (k, k) {
        return Err(Error::state("trace shape does not match layer"));
    }
    state.check_shapes()?;
    let mut g = Graph::new();
    let w = g.constant(params.w.clone());
    let alpha = g.constant(params.alpha.clone());
    let mut traced = TracedPlasticState::attach(&mut g, state);
    let xin = g.input(x);
    let y = record_plastic_step(&mut g, w, alpha, &mut traced, xin, params.eta);
    Ok((g.vector(y).to_vec(), traced.detach(&g)))
}

/// Graph-resident view of a [`PlasticLayerState`] during one sequence.
#[derive(Debug, Clone, Copy)]
pub struct TracedPlasticState {
    pub hebb: NodeId,
    pub prev_in: Option<NodeId>,
    pub prev_out: Option<NodeId>,
}

impl TracedPlasticState {
    /// Enter a stored state into the graph as constants, so no gradient
    /// flows into earlier sequences.
    pub fn attach<T: Scalar>(g: &mut Graph<T>, state: &PlasticLayerState<T>) -> Self {
        Self {
            hebb: g.constant(state.hebb.clone()),
            prev_in: state.prev_in.as_deref().map(|v| g.input(v)),
            prev_out: state.prev_out.as_deref().map(|v| g.input(v)),
        }
    }

    pub fn detach<T: Scalar>(&self, g: &Graph<T>) -> PlasticLayerState<T> {
        PlasticLayerState {
            hebb: g.value(self.hebb).clone(),
            prev_in: self.prev_in.map(|id| g.vector(id).to_vec()),
            prev_out: self.prev_out.map(|id| g.vector(id).to_vec()),
        }
    }
}

/// Record trace update then `tanh((w + alpha . hebb)^T x)`.
pub fn record_plastic_step<T: Scalar>(
    g: &mut Graph<T>,
    w: NodeId,
    alpha: NodeId,
    state: &mut TracedPlasticState,
    x: NodeId,
    eta: T,
) -> NodeId {
    if let (Some(pre), Some(post)) = (state.prev_in, state.prev_out) {
        state.hebb = g.oja(state.hebb, pre, post, eta);
    }
    let gated = g.mul(alpha, state.hebb);
    let effective = g.add(w, gated);
    let pre_act = g.mat_t_vec(effective, x);
    let y = g.tanh(pre_act);
    state.prev_in = Some(x);
    state.prev_out = Some(y);
    y
}

/// A plastic layer whose `w` and `alpha` live in a [`ParameterTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlasticLayer {
    pub w: ParamId,
    pub alpha: ParamId,
    pub dim: usize,
}

impl PlasticLayer {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        tape: &mut ParameterTape<T>,
        prefix: &str,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let init = PlasticLayerParams::<T>::random(k, T::zero(), rng);
        Ok(Self {
            w: tape.register(format!("{prefix}.w"), init.w)?,
            alpha: tape.register(format!("{prefix}.alpha"), init.alpha)?,
            dim: k,
        })
    }

    pub fn params<T: Scalar>(&self, tape: &ParameterTape<T>, eta: T) -> PlasticLayerParams<T> {
        PlasticLayerParams {
            w: tape.value(self.w).clone(),
            alpha: tape.value(self.alpha).clone(),
            eta,
        }
    }

    pub fn record_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        tape: &ParameterTape<T>,
        state: &mut TracedPlasticState,
        x: NodeId,
        eta: T,
    ) -> NodeId {
        let w = g.param(tape, self.w);
        let alpha = g.param(tape, self.alpha);
        record_plastic_step(g, w, alpha, state, x, eta)
    }
}
