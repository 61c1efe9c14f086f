//! End-to-end sequence classifier: two-layer LSTM encoder, a memory cell
//! stepped once per encoder output, and a dense softmax head reading the
//! final memory output.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, LstmCell};
use crate::memory::{init_memory, MemoryCell, MemoryInit, MemoryKind, MemoryState, StepNodes};
use crate::numerics::{
    finite_diff_check, Graph, GradCheckReport, Matrix, NamedMatrix, NodeId, ParamId,
    ParameterTape,
};
use crate::plastic::{PlasticLayer, PlasticLayerState};
use crate::recurrent::{Encoder, LstmLayer};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "pnmn-checkpoint/1";

/// Probability floor applied before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLifetime {
    /// Memory stack and Hebbian traces reset before every sequence.
    PerSequence,
    /// Hebbian traces carry over from one sequence to the next; the stack
    /// still starts each sequence from its initial value.
    Persistent,
}

impl FromStr for TraceLifetime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_sequence" => Ok(TraceLifetime::PerSequence),
            "persistent" => Ok(TraceLifetime::Persistent),
            _ => Err(Error::invalid(format!("unknown trace lifetime {s:?} (per_sequence|persistent)"))),
        }
    }
}

impl std::fmt::Display for TraceLifetime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TraceLifetime::PerSequence => "per_sequence",
            TraceLifetime::Persistent => "persistent",
        })
    }
}

/// How the initial memory stack is filled; the uniform draw is seeded from
/// the model seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryInitPolicy {
    Zeros,
    Uniform,
}

impl FromStr for MemoryInitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(MemoryInitPolicy::Zeros),
            "uniform" => Ok(MemoryInitPolicy::Uniform),
            _ => Err(Error::invalid(format!("unknown memory init {s:?} (zeros|uniform)"))),
        }
    }
}

impl std::fmt::Display for MemoryInitPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryInitPolicy::Zeros => "zeros",
            MemoryInitPolicy::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// `k`: encoder hidden size, controller size and slot width.
    pub embed_dim: usize,
    /// `l`: number of memory slots.
    pub memory_len: usize,
    /// Plasticity learning rate shared by all plastic controllers.
    pub eta: f64,
    pub num_classes: usize,
    pub memory_kind: MemoryKind,
    pub trace_lifetime: TraceLifetime,
    pub memory_init: MemoryInitPolicy,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            embed_dim: 16,
            memory_len: 8,
            eta: 0.5,
            num_classes: 2,
            memory_kind: MemoryKind::Plastic,
            trace_lifetime: TraceLifetime::PerSequence,
            // An all-zero stack is absorbing for the bias-free plastic
            // controllers, so models default to a seeded uniform stack.
            memory_init: MemoryInitPolicy::Uniform,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("memory_len", self.memory_len),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    fn memory_init(&self) -> MemoryInit {
        match self.memory_init {
            MemoryInitPolicy::Zeros => MemoryInit::Zeros,
            MemoryInitPolicy::Uniform => MemoryInit::Uniform {
                seed: self.seed ^ 0x6d65_6d6f_7279,
            },
        }
    }
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &[T], label: usize) -> Result<T> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::invalid(format!("label {label} out of range for {} classes", probs.len())))?;
    if p.is_nan() {
        return Ok(*p);
    }
    Ok(-(p.larger(T::of(PROB_FLOOR))).ln())
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Scalar type the finite differences of [`Classifier::gradcheck`] are
/// evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oracle {
    /// The model's own scalar type.
    Native,
    /// IEEE binary128. Removes the oracle's rounding noise (about
    /// `1e-16 * |loss| / h`), which otherwise dominates the relative error
    /// of gradients near zero.
    #[cfg(feature = "quad")]
    Quad,
}

/// Result of a forward pass with per-step memory diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub probs: Vec<T>,
    /// `m_t` for every step.
    pub memory_outputs: Vec<Vec<T>>,
    /// `z_t` for every step.
    pub attention: Vec<Vec<T>>,
}

/// Node ids of a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub probs: NodeId,
    pub steps: Vec<StepNodes>,
    memory: crate::memory::TracedMemory,
}

#[derive(Debug, Clone)]
pub struct Classifier<T = f64> {
    config: ModelConfig,
    params: ParameterTape<T>,
    encoder: Encoder,
    memory: MemoryCell,
    head_w: ParamId,
    head_b: ParamId,
    initial_stack: Matrix<T>,
    state: MemoryState<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterTape::new();
        let k = config.embed_dim;
        let encoder = Encoder::register(&mut params, config.input_dim, k, &mut rng)?;
        let memory = MemoryCell::register(&mut params, config.memory_kind, k, &mut rng)?;
        let bound = 1.0 / (k as f64).sqrt();
        let head_w = params.register(
            "head.w",
            Matrix::random_uniform(config.num_classes, k, -bound, bound, &mut rng),
        )?;
        let head_b = params.register("head.b", Matrix::zeros(config.num_classes, 1))?;
        let initial_stack = init_memory(config.memory_len, k, config.memory_init())?;
        let state = memory.fresh_state(initial_stack.clone());
        Ok(Self {
            config,
            params,
            encoder,
            memory,
            head_w,
            head_b,
            initial_stack,
            state,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterTape<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterTape<T> {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn memory_cell(&self) -> &MemoryCell {
        &self.memory
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }

    pub fn initial_stack(&self) -> &Matrix<T> {
        &self.initial_stack
    }

    pub fn state(&self) -> &MemoryState<T> {
        &self.state
    }

    pub fn set_state(&mut self, state: MemoryState<T>) -> Result<()> {
        let fresh = self.memory.fresh_state(self.initial_stack.clone());
        let traces_ok = match (&fresh.traces, &state.traces) {
            (None, None) => true,
            (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.hebb.shape() == y.hebb.shape()),
            _ => false,
        };
        if state.stack.shape() != fresh.stack.shape() || !traces_ok {
            return Err(Error::invalid("memory state does not match the model"));
        }
        self.state = state;
        Ok(())
    }

    /// The same model in another scalar type, including its memory state.
    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            memory: self.memory,
            head_w: self.head_w,
            head_b: self.head_b,
            initial_stack: self.initial_stack.cast(),
            state: self.state.cast(),
        }
    }

    /// Finite-difference check of the loss gradient for one labelled
    /// sequence from the current start state.
    pub fn gradcheck(&self, seq: &[Vec<T>], label: usize, h: f64, tol: f64, oracle: Oracle) -> Result<GradCheckReport> {
        let analytic = |g: &mut Graph<T>, p: &ParameterTape<T>| Ok(self.record_loss(g, p, seq, label)?.0);
        match oracle {
            Oracle::Native => finite_diff_check(&self.params, analytic, h, tol),
            #[cfg(feature = "quad")]
            Oracle::Quad => {
                let wide = self.cast::<f128::f128>();
                let wide_seq: Vec<Vec<f128::f128>> = seq
                    .iter()
                    .map(|x| x.iter().map(|v| Scalar::of(v.as_f64())).collect())
                    .collect();
                crate::numerics::finite_diff_check_with_oracle(
                    &self.params,
                    analytic,
                    |g, p| Ok(wide.record_loss(g, p, &wide_seq, label)?.0),
                    h,
                    tol,
                )
            }
        }
    }

    /// Restore the initial stack and zero traces.
    pub fn reset_state(&mut self) {
        self.state = self.memory.fresh_state(self.initial_stack.clone());
    }

    fn eta(&self) -> T {
        T::of(self.config.eta)
    }

    fn check_sequence(&self, seq: &[Vec<T>]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::invalid("sequence must be non-empty"));
        }
        let d = self.config.input_dim;
        for (t, x) in seq.iter().enumerate() {
            if x.len() != d {
                return Err(Error::invalid(format!(
                    "step {t}: expected input dim {d}, found {}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("step {t}: non-finite input")));
            }
        }
        Ok(())
    }

    fn start_state(&self) -> MemoryState<T> {
        match self.config.trace_lifetime {
            TraceLifetime::PerSequence => self.memory.fresh_state(self.initial_stack.clone()),
            TraceLifetime::Persistent => MemoryState {
                stack: self.initial_stack.clone(),
                ..self.state.clone()
            },
        }
    }

    /// Record a forward pass against `params` (which may differ from the
    /// model's own values, as in gradient checking) from the model's
    /// current start state.
    pub fn record(&self, g: &mut Graph<T>, params: &ParameterTape<T>, seq: &[Vec<T>]) -> Result<Recorded> {
        self.check_sequence(seq)?;
        let start = self.start_state();
        let inputs: Vec<NodeId> = seq.iter().map(|x| g.input(x)).collect();
        let embedded = self.encoder.record(g, params, &inputs);
        let mut traced = self.memory.attach(g, &start)?;
        let eta = self.eta();
        let steps: Vec<StepNodes> = embedded
            .iter()
            .map(|&e| self.memory.record_step(g, params, &mut traced, e, eta))
            .collect();
        let last = steps.last().expect("non-empty sequence").output;
        let w = g.param(params, self.head_w);
        let b = g.param(params, self.head_b);
        let lin = g.matvec(w, last);
        let logits = g.add(lin, b);
        let probs = g.softmax(logits);
        Ok(Recorded {
            probs,
            steps,
            memory: traced,
        })
    }

    /// Record forward plus cross-entropy loss; returns the loss node.
    pub fn record_loss(
        &self,
        g: &mut Graph<T>,
        params: &ParameterTape<T>,
        seq: &[Vec<T>],
        label: usize,
    ) -> Result<(NodeId, Recorded)> {
        self.check_label(label)?;
        let rec = self.record(g, params, seq)?;
        let loss = g.neg_log_pick(rec.probs, label, T::of(PROB_FLOOR));
        Ok((loss, rec))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.config.num_classes {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                self.config.num_classes
            )));
        }
        Ok(())
    }

    fn commit(&mut self, g: &Graph<T>, rec: &Recorded, steps: usize) {
        let start_steps = match self.config.trace_lifetime {
            TraceLifetime::PerSequence => 0,
            TraceLifetime::Persistent => self.state.steps,
        };
        self.state = self.memory.detach(g, &rec.memory, start_steps + steps as u64);
        if let Some(traces) = &self.state.traces {
            for (trace, name) in traces.iter().zip(["read", "out", "write"]) {
                trace.check_divergence(name);
            }
        }
    }

    /// Forward pass without a graph from `start`. Returns the class
    /// probabilities, the end state and, when `diagnostics` is set, the
    /// per-step memory outputs and attention.
    fn run_plain(&self, seq: &[Vec<T>], mut state: MemoryState<T>, diagnostics: bool) -> (Vec<T>, MemoryState<T>, Forward<T>) {
        let p = &self.params;
        let k = self.config.embed_dim;
        let eta = self.eta();
        let lstm = |l: &LstmLayer| (p.value(l.w_ih), p.value(l.w_hh), p.value(l.b));
        let enc = [lstm(&self.encoder.layers[0]), lstm(&self.encoder.layers[1])];
        let mut cells = [(); 4].map(|_| LstmCell::zeros(k));
        let [e1, e2, rd, wr] = &mut cells;
        let (mut q, mut z, mut beta, mut m, mut update) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut diag = Forward {
            probs: Vec::new(),
            memory_outputs: Vec::new(),
            attention: Vec::new(),
        };
        for x in seq {
            e1.step(enc[0], x);
            e2.step(enc[1], &e1.h);
            match (&self.memory, &mut state.traces) {
                (MemoryCell::Baseline { read, write }, _) => {
                    rd.step(lstm(read), &e2.h);
                    inference::attend_into(&rd.h, &state.stack, &mut z);
                    inference::mat_t_vec_into(&state.stack, &z, &mut m);
                    wr.step(lstm(write), &m);
                    inference::blend(&mut state.stack, &z, &wr.h);
                }
                (MemoryCell::Plastic { read, out, write }, Some([tr, to, tw])) => {
                    let pair = |l: &PlasticLayer| (p.value(l.w), p.value(l.alpha));
                    let ((rw, ra), (ow, oa), (ww, wa)) = (pair(read), pair(out), pair(write));
                    inference::plastic_step(rw, ra, tr, &e2.h, eta, &mut q);
                    inference::attend_into(&q, &state.stack, &mut z);
                    inference::mat_t_vec_into(&state.stack, &z, &mut beta);
                    inference::plastic_step(ow, oa, to, &beta, eta, &mut m);
                    inference::plastic_step(ww, wa, tw, &m, eta, &mut update);
                    inference::blend(&mut state.stack, &z, &update);
                }
                (MemoryCell::Plastic { .. }, None) => unreachable!("plastic state always carries traces"),
            }
            if diagnostics {
                diag.memory_outputs.push(m.clone());
                diag.attention.push(z.clone());
            }
        }
        let mut logits = Vec::new();
        inference::matvec_into(p.value(self.head_w), &m, &mut logits);
        for (v, &b) in logits.iter_mut().zip(p.value(self.head_b).data()) {
            *v = *v + b;
        }
        inference::softmax_in_place(&mut logits);
        state.steps += seq.len() as u64;
        (logits, state, diag)
    }

    fn advance(&mut self, seq: &[Vec<T>], diagnostics: bool) -> Result<Forward<T>> {
        self.check_sequence(seq)?;
        let (probs, state, mut diag) = self.run_plain(seq, self.start_state(), diagnostics);
        if let Some(traces) = &state.traces {
            for (trace, name) in traces.iter().zip(["read", "out", "write"]) {
                trace.check_divergence(name);
            }
        }
        self.state = state;
        diag.probs = probs;
        Ok(diag)
    }

    /// Class probabilities and per-step diagnostics. In persistent mode
    /// the memory state advances.
    pub fn forward(&mut self, seq: &[Vec<T>]) -> Result<Forward<T>> {
        self.advance(seq, true)
    }

    /// Class probabilities only.
    pub fn probabilities(&mut self, seq: &[Vec<T>]) -> Result<Vec<T>> {
        Ok(self.advance(seq, false)?.probs)
    }

    /// [`Classifier::forward`] through the recorded graph. Slower; kept as
    /// an independent route for cross-checking.
    pub fn forward_recorded(&mut self, seq: &[Vec<T>]) -> Result<Forward<T>> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, &self.params, seq)?;
        let out = Forward {
            probs: g.vector(rec.probs).to_vec(),
            memory_outputs: rec.steps.iter().map(|s| g.vector(s.output).to_vec()).collect(),
            attention: rec.steps.iter().map(|s| g.vector(s.attention).to_vec()).collect(),
        };
        self.commit(&g, &rec, seq.len());
        Ok(out)
    }

    pub fn predict(&mut self, seq: &[Vec<T>]) -> Result<usize> {
        Ok(argmax(&self.probabilities(seq)?))
    }

    /// Forward, loss and backward for one labelled sequence. Gradients are
    /// written into the parameter tape; returns `(loss, probs)`.
    pub fn loss_and_grad(&mut self, seq: &[Vec<T>], label: usize) -> Result<(T, Vec<T>)> {
        let mut g = Graph::new();
        let (loss, rec) = self.record_loss(&mut g, &self.params, seq, label)?;
        g.backward(loss, &mut self.params)?;
        let probs = g.vector(rec.probs).to_vec();
        let value = g.scalar(loss);
        self.commit(&g, &rec, seq.len());
        Ok((value, probs))
    }

    /// Names accepted by [`Classifier::named_matrix`] for this model.
    pub fn matrix_names(&self) -> Vec<&'static str> {
        match self.memory {
            MemoryCell::Baseline { .. } => vec!["memory"],
            MemoryCell::Plastic { .. } => vec![
                "memory",
                "read_w",
                "read_alpha",
                "read_hebb",
                "out_w",
                "out_alpha",
                "out_hebb",
                "write_w",
                "write_alpha",
                "write_hebb",
            ],
        }
    }

    /// Current value of a memory-related matrix by short name.
    pub fn named_matrix(&self, name: &str) -> Result<Matrix<T>> {
        let unknown = || {
            Error::invalid(format!(
                "unknown matrix {name:?}; valid names: {}",
                self.matrix_names().join(", ")
            ))
        };
        if name == "memory" {
            return Ok(self.state.stack.clone());
        }
        let MemoryCell::Plastic { read, out, write } = &self.memory else {
            return Err(unknown());
        };
        let (ctrl, field) = name.split_once('_').ok_or_else(unknown)?;
        let (layer, idx) = match ctrl {
            "read" => (read, 0),
            "out" => (out, 1),
            "write" => (write, 2),
            _ => return Err(unknown()),
        };
        match field {
            "w" => Ok(self.params.value(layer.w).clone()),
            "alpha" => Ok(self.params.value(layer.alpha).clone()),
            "hebb" => Ok(self.state.traces.as_ref().expect("plastic state has traces")[idx].hebb.clone()),
            _ => Err(unknown()),
        }
    }

    pub fn to_checkpoint(&self, include_state: bool) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            matrices: self.params.to_named(),
            initial_memory: self.initial_stack.to_named("initial_memory"),
            state: include_state.then(|| CheckpointState::from_state(&self.state)),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT:?})",
                ckpt.format
            )));
        }
        let mut model = Self::new(ckpt.config.clone())?;
        model.params.load_named(&ckpt.matrices)?;
        let initial = ckpt.initial_memory.to_matrix()?;
        if initial.shape() != model.initial_stack.shape() {
            return Err(Error::invalid("initial memory shape does not match config"));
        }
        model.initial_stack = initial;
        model.reset_state();
        if let Some(state) = &ckpt.state {
            let restored = state.to_state(model.state.traces.is_some())?;
            model.set_state(restored)?;
        }
        Ok(model)
    }
}

/// Serialized model: config, parameters, initial stack and optional runtime
/// memory state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub matrices: Vec<NamedMatrix>,
    pub initial_memory: NamedMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<CheckpointState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSnapshot {
    pub hebb: NamedMatrix,
    pub prev_in: Option<Vec<f64>>,
    pub prev_out: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub memory: NamedMatrix,
    #[serde(default)]
    pub traces: Vec<TraceSnapshot>,
    pub steps: u64,
}

impl CheckpointState {
    fn from_state<T: Scalar>(state: &MemoryState<T>) -> Self {
        let to_f64 = |v: &Option<Vec<T>>| v.as_ref().map(|x| x.iter().map(|e| e.as_f64()).collect());
        Self {
            memory: state.stack.to_named("memory"),
            traces: state
                .traces
                .iter()
                .flatten()
                .zip(["read_hebb", "out_hebb", "write_hebb"])
                .map(|(t, name)| TraceSnapshot {
                    hebb: t.hebb.to_named(name),
                    prev_in: to_f64(&t.prev_in),
                    prev_out: to_f64(&t.prev_out),
                })
                .collect(),
            steps: state.steps,
        }
    }

    fn to_state<T: Scalar>(&self, plastic: bool) -> Result<MemoryState<T>> {
        let from_f64 = |v: &Option<Vec<f64>>| v.as_ref().map(|x| x.iter().map(|&e| T::of(e)).collect());
        let traces = if plastic {
            if self.traces.len() != 3 {
                return Err(Error::invalid("plastic checkpoint state needs three traces"));
            }
            let mut it = self.traces.iter().map(|t| -> Result<PlasticLayerState<T>> {
                Ok(PlasticLayerState {
                    hebb: t.hebb.to_matrix()?,
                    prev_in: from_f64(&t.prev_in),
                    prev_out: from_f64(&t.prev_out),
                })
            });
            let (a, b, c) = (it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?);
            Some([a, b, c])
        } else {
            None
        };
        Ok(MemoryState {
            stack: self.memory.to_matrix()?,
            traces,
            steps: self.steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: MemoryKind) -> ModelConfig {
        ModelConfig {
            input_dim: 2,
            embed_dim: 4,
            memory_len: 2,
            memory_kind: kind,
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn seq() -> Vec<Vec<f64>> {
        vec![vec![0.1, -0.2], vec![0.7, 0.3], vec![-0.5, 0.9]]
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut model = Classifier::<f64>::new(small(MemoryKind::Plastic)).unwrap();
        let (w, _) = model.head();
        model.params_mut().value_mut(w).fill(0.0);
        let p = model.forward(&seq()).unwrap().probs;
        assert_eq!(p, vec![0.5, 0.5]);
        assert_eq!(model.predict(&seq()).unwrap(), 0);
    }

    #[test]
    fn one_step_diagnostics() {
        let mut model = Classifier::<f64>::new(small(MemoryKind::Baseline)).unwrap();
        let f = model.forward(&[vec![0.3, 0.3]]).unwrap();
        assert_eq!(f.memory_outputs.len(), 1);
        assert_eq!(f.attention.len(), 1);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy(&[1.0f64, 0.0], 0).unwrap().abs() < 1e-11);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn rejects_bad_dims() {
        let mut model = Classifier::<f64>::new(small(MemoryKind::Plastic)).unwrap();
        assert!(model.forward(&[vec![1.0]]).is_err());
        assert!(model.forward(&[]).is_err());
        assert!(model.loss_and_grad(&seq(), 5).is_err());
    }

    #[test]
    fn per_sequence_forward_repeatable() {
        let mut model = Classifier::<f64>::new(small(MemoryKind::Plastic)).unwrap();
        let a = model.forward(&seq()).unwrap();
        let b = model.forward(&seq()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn persistent_forward_mutates() {
        let cfg = ModelConfig {
            trace_lifetime: TraceLifetime::Persistent,
            ..small(MemoryKind::Plastic)
        };
        let mut model = Classifier::<f64>::new(cfg).unwrap();
        let a = model.forward(&seq()).unwrap();
        let b = model.forward(&seq()).unwrap();
        assert_ne!(a.probs, b.probs);
        assert_eq!(model.state().steps, 6);
    }

    #[test]
    fn plain_and_recorded_routes_agree() {
        for kind in [MemoryKind::Plastic, MemoryKind::Baseline] {
            for lifetime in [TraceLifetime::PerSequence, TraceLifetime::Persistent] {
                let cfg = ModelConfig {
                    trace_lifetime: lifetime,
                    ..small(kind)
                };
                let mut plain = Classifier::<f64>::new(cfg.clone()).unwrap();
                let mut recorded = Classifier::<f64>::new(cfg).unwrap();
                for _ in 0..3 {
                    assert_eq!(plain.forward(&seq()).unwrap(), recorded.forward_recorded(&seq()).unwrap());
                    assert_eq!(plain.state(), recorded.state());
                }
            }
        }
    }

    #[test]
    fn named_matrices() {
        let model = Classifier::<f64>::new(small(MemoryKind::Plastic)).unwrap();
        assert_eq!(model.named_matrix("out_hebb").unwrap(), Matrix::zeros(4, 4));
        assert_eq!(model.named_matrix("memory").unwrap().shape(), (2, 4));
        let err = model.named_matrix("bogus").unwrap_err().to_string();
        assert!(err.contains("out_hebb"), "{err}");
        let base = Classifier::<f64>::new(small(MemoryKind::Baseline)).unwrap();
        assert!(base.named_matrix("out_w").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig {
            trace_lifetime: TraceLifetime::Persistent,
            ..small(MemoryKind::Plastic)
        };
        let mut model = Classifier::<f64>::new(cfg).unwrap();
        model.forward(&seq()).unwrap();
        let ckpt = model.to_checkpoint(true);
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ckpt);
        let mut restored = Classifier::<f64>::from_checkpoint(&back).unwrap();
        assert_eq!(restored.state(), model.state());
        assert_eq!(restored.forward(&seq()).unwrap(), model.forward(&seq()).unwrap());
    }

    #[test]
    fn f32_model_runs() {
        let mut model = Classifier::<f32>::new(small(MemoryKind::Plastic)).unwrap();
        let s: Vec<Vec<f32>> = seq().iter().map(|x| x.iter().map(|&v| v as f32).collect()).collect();
        let p = model.forward(&s).unwrap().probs;
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(Classifier::<f64>::new(ModelConfig { eta: 1.5, ..small(MemoryKind::Plastic) }).is_err());
        assert!(Classifier::<f64>::new(ModelConfig { embed_dim: 0, ..small(MemoryKind::Plastic) }).is_err());
    }
}
