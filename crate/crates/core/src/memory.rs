//! External memory stack with attention addressing.
//!
//! The stack `M` is `l x k`: `l` slots, each a `k`-dimensional embedding.
//! A query `q` addresses slots through `z = softmax(M q)`, the read is the
//! attention-weighted row sum `M^T z`, and a write blends each slot toward
//! the update vector in proportion to its attention weight:
//! `M'[s,:] = (1 - z[s]) M[s,:] + z[s] m'`.
//!
//! Two cells drive the stack. The baseline cell uses LSTM read and write
//! controllers. The plastic cell replaces the read, output and write
//! controllers with plastic layers (see [`crate::plastic`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{slot_blend, softmax, Graph, Matrix, NodeId, ParameterTape};
use crate::plastic::{record_plastic_step, PlasticLayer, PlasticLayerParams, PlasticLayerState, TracedPlasticState};
use crate::recurrent::{record_lstm_step, LstmLayer, LstmParams, LstmState, TracedLstmState};
use crate::scalar::Scalar;

/// Initial contents of the memory stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum MemoryInit {
    Zeros,
    /// Entries `U(-0.1, 0.1)` from the given seed.
    Uniform { seed: u64 },
}

pub fn init_memory<T: Scalar>(l: usize, k: usize, policy: MemoryInit) -> Result<Matrix<T>> {
    if l == 0 || k == 0 {
        return Err(Error::invalid(format!("memory dimensions must be positive, got {l}x{k}")));
    }
    Ok(match policy {
        MemoryInit::Zeros => Matrix::zeros(l, k),
        MemoryInit::Uniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Matrix::random_uniform(l, k, -0.1, 0.1, &mut rng)
        }
    })
}

/// Slot attention `softmax(M q)`.
pub fn attend<T: Scalar>(q: &[T], stack: &Matrix<T>) -> Result<Vec<T>> {
    if q.len() != stack.cols() {
        return Err(Error::invalid(format!("query dim {} != slot width {}", q.len(), stack.cols())));
    }
    softmax(&stack.matvec(q))
}

/// Attention-weighted read `M^T z`.
pub fn read_slots<T: Scalar>(z: &[T], stack: &Matrix<T>) -> Vec<T> {
    stack.mat_t_vec(z)
}

/// Per-slot erase/add blend toward `update`.
pub fn write_slots<T: Scalar>(stack: &Matrix<T>, z: &[T], update: &[T]) -> Matrix<T> {
    slot_blend(stack, z, update)
}

pub fn record_attend<T: Scalar>(g: &mut Graph<T>, q: NodeId, stack: NodeId) -> NodeId {
    let scores = g.matvec(stack, q);
    g.softmax(scores)
}

pub fn record_read<T: Scalar>(g: &mut Graph<T>, z: NodeId, stack: NodeId) -> NodeId {
    g.mat_t_vec(stack, z)
}

/// Node ids produced by one memory step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    /// Memory output `m_t`.
    pub output: NodeId,
    /// Attention `z_t`.
    pub attention: NodeId,
}

/// `(w, alpha)` nodes for the read, output and write controllers.
pub type PlasticNodes = [(NodeId, NodeId); 3];

/// One plastic memory step: read controller -> attention -> read ->
/// output controller -> write controller -> blend. Advances each trace once.
pub fn record_plastic_memory_step<T: Scalar>(
    g: &mut Graph<T>,
    ctrl: PlasticNodes,
    traces: &mut [TracedPlasticState; 3],
    stack: &mut NodeId,
    x: NodeId,
    eta: T,
) -> StepNodes {
    let [(rw, ra), (ow, oa), (ww, wa)] = ctrl;
    let q = record_plastic_step(g, rw, ra, &mut traces[0], x, eta);
    let z = record_attend(g, q, *stack);
    let beta = record_read(g, z, *stack);
    let m = record_plastic_step(g, ow, oa, &mut traces[1], beta, eta);
    let update = record_plastic_step(g, ww, wa, &mut traces[2], m, eta);
    *stack = g.slot_blend(*stack, z, update);
    StepNodes {
        output: m,
        attention: z,
    }
}

/// `(w_ih, w_hh, b)` nodes for one LSTM controller.
pub type LstmNodes = (NodeId, NodeId, NodeId);

/// One baseline step: read LSTM -> attention -> read (the output) ->
/// write LSTM -> blend.
pub fn record_baseline_memory_step<T: Scalar>(
    g: &mut Graph<T>,
    read: LstmNodes,
    write: LstmNodes,
    states: &mut [TracedLstmState; 2],
    stack: &mut NodeId,
    x: NodeId,
    k: usize,
) -> StepNodes {
    let q = record_lstm_step(g, read.0, read.1, read.2, &mut states[0], x, k);
    let z = record_attend(g, q, *stack);
    let m = record_read(g, z, *stack);
    let update = record_lstm_step(g, write.0, write.1, write.2, &mut states[1], m, k);
    *stack = g.slot_blend(*stack, z, update);
    StepNodes {
        output: m,
        attention: z,
    }
}

/// Output of one plain memory step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub output: Vec<T>,
    pub attention: Vec<T>,
}

fn check_step_input<T: Scalar>(x: &[T], k: usize) -> Result<()> {
    if x.len() != k {
        return Err(Error::invalid(format!("memory step expects dim {k}, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite memory input"));
    }
    Ok(())
}

/// Plastic controller with its own parameters and trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticController<T = f64> {
    pub params: PlasticLayerParams<T>,
    pub state: PlasticLayerState<T>,
}

/// Self-contained plastic memory cell on plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct PlasticMemoryCell<T = f64> {
    pub read: PlasticController<T>,
    pub out: PlasticController<T>,
    pub write: PlasticController<T>,
    pub stack: Matrix<T>,
}

impl<T: Scalar> PlasticMemoryCell<T> {
    pub fn random<R: Rng + ?Sized>(k: usize, l: usize, eta: T, init: MemoryInit, rng: &mut R) -> Result<Self> {
        let mut ctrl = || PlasticController {
            params: PlasticLayerParams::random(k, eta, rng),
            state: PlasticLayerState::new(k),
        };
        let (read, out, write) = (ctrl(), ctrl(), ctrl());
        Ok(Self {
            read,
            out,
            write,
            stack: init_memory(l, k, init)?,
        })
    }

    pub fn k(&self) -> usize {
        self.stack.cols()
    }

    pub fn step(&mut self, x: &[T]) -> Result<StepOutput<T>> {
        let k = self.k();
        check_step_input(x, k)?;
        let eta = self.read.params.eta;
        for c in [&self.read, &self.out, &self.write] {
            if c.params.dim() != k || c.state.hebb.shape() != (k, k) {
                return Err(Error::invalid("plastic controllers must all have dimension k"));
            }
            if c.params.eta != eta {
                return Err(Error::invalid("plastic controllers must share eta"));
            }
        }
        let mut g = Graph::new();
        let mut pair = |c: &PlasticController<T>| (g.constant(c.params.w.clone()), g.constant(c.params.alpha.clone()));
        let ctrl = [pair(&self.read), pair(&self.out), pair(&self.write)];
        let mut traces = [
            TracedPlasticState::attach(&mut g, &self.read.state),
            TracedPlasticState::attach(&mut g, &self.out.state),
            TracedPlasticState::attach(&mut g, &self.write.state),
        ];
        let mut stack = g.constant(self.stack.clone());
        let xin = g.input(x);
        let nodes = record_plastic_memory_step(&mut g, ctrl, &mut traces, &mut stack, xin, eta);
        self.read.state = traces[0].detach(&g);
        self.out.state = traces[1].detach(&g);
        self.write.state = traces[2].detach(&g);
        self.stack = g.value(stack).clone();
        Ok(StepOutput {
            output: g.vector(nodes.output).to_vec(),
            attention: g.vector(nodes.attention).to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmController<T = f64> {
    pub params: LstmParams<T>,
    pub state: LstmState<T>,
}

/// Self-contained baseline memory cell on plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineMemoryCell<T = f64> {
    pub read: LstmController<T>,
    pub write: LstmController<T>,
    pub stack: Matrix<T>,
}

impl<T: Scalar> BaselineMemoryCell<T> {
    pub fn random<R: Rng + ?Sized>(k: usize, l: usize, init: MemoryInit, rng: &mut R) -> Result<Self> {
        let mut ctrl = || LstmController {
            params: LstmParams::random(k, k, rng),
            state: LstmState::zeros(k),
        };
        let (read, write) = (ctrl(), ctrl());
        Ok(Self {
            read,
            write,
            stack: init_memory(l, k, init)?,
        })
    }

    pub fn k(&self) -> usize {
        self.stack.cols()
    }

    pub fn step(&mut self, x: &[T]) -> Result<StepOutput<T>> {
        let k = self.k();
        check_step_input(x, k)?;
        for c in [&self.read, &self.write] {
            if c.params.hidden() != k || c.params.input_dim() != k {
                return Err(Error::invalid("baseline controllers must have hidden dim k"));
            }
        }
        let mut g = Graph::new();
        let mut triple = |c: &LstmController<T>| {
            (
                g.constant(c.params.w_ih.clone()),
                g.constant(c.params.w_hh.clone()),
                g.constant(c.params.b.clone()),
            )
        };
        let (read, write) = (triple(&self.read), triple(&self.write));
        let mut states = [
            TracedLstmState::attach(&mut g, &self.read.state),
            TracedLstmState::attach(&mut g, &self.write.state),
        ];
        let mut stack = g.constant(self.stack.clone());
        let xin = g.input(x);
        let nodes = record_baseline_memory_step(&mut g, read, write, &mut states, &mut stack, xin, k);
        self.read.state = states[0].detach(&g);
        self.write.state = states[1].detach(&g);
        self.stack = g.value(stack).clone();
        Ok(StepOutput {
            output: g.vector(nodes.output).to_vec(),
            attention: g.vector(nodes.attention).to_vec(),
        })
    }
}

/// Which memory cell a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Baseline,
    Plastic,
}

impl std::fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryKind::Baseline => "baseline",
            MemoryKind::Plastic => "plastic",
        })
    }
}

impl std::str::FromStr for MemoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(MemoryKind::Baseline),
            "plastic" => Ok(MemoryKind::Plastic),
            _ => Err(Error::invalid(format!("unknown memory kind {s:?} (baseline|plastic)"))),
        }
    }
}

/// Memory controllers registered in a model's [`ParameterTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryCell {
    Baseline { read: LstmLayer, write: LstmLayer },
    Plastic { read: PlasticLayer, out: PlasticLayer, write: PlasticLayer },
}

/// Persistent runtime state of a memory cell between sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T = f64> {
    pub stack: Matrix<T>,
    /// Read, output, write traces (plastic cells only).
    pub traces: Option<[PlasticLayerState<T>; 3]>,
    /// Memory steps taken since construction.
    pub steps: u64,
}

impl<T: Scalar> MemoryState<T> {
    pub fn cast<U: Scalar>(&self) -> MemoryState<U> {
        MemoryState {
            stack: self.stack.cast(),
            traces: self.traces.as_ref().map(|t| t.each_ref().map(PlasticLayerState::cast)),
            steps: self.steps,
        }
    }
}

/// Graph-resident memory state for one sequence.
#[derive(Debug, Clone, Copy)]
pub struct TracedMemory {
    pub stack: NodeId,
    controllers: TracedControllers,
}

#[derive(Debug, Clone, Copy)]
enum TracedControllers {
    Baseline([TracedLstmState; 2]),
    Plastic([TracedPlasticState; 3]),
}

impl MemoryCell {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        tape: &mut ParameterTape<T>,
        kind: MemoryKind,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            MemoryKind::Baseline => MemoryCell::Baseline {
                read: LstmLayer::register(tape, "mem.read", k, k, rng)?,
                write: LstmLayer::register(tape, "mem.write", k, k, rng)?,
            },
            MemoryKind::Plastic => MemoryCell::Plastic {
                read: PlasticLayer::register(tape, "mem.read", k, rng)?,
                out: PlasticLayer::register(tape, "mem.out", k, rng)?,
                write: PlasticLayer::register(tape, "mem.write", k, rng)?,
            },
        })
    }

    pub fn kind(&self) -> MemoryKind {
        match self {
            MemoryCell::Baseline { .. } => MemoryKind::Baseline,
            MemoryCell::Plastic { .. } => MemoryKind::Plastic,
        }
    }

    pub fn fresh_state<T: Scalar>(&self, stack: Matrix<T>) -> MemoryState<T> {
        let k = stack.cols();
        MemoryState {
            stack,
            traces: match self {
                MemoryCell::Baseline { .. } => None,
                MemoryCell::Plastic { .. } => Some([
                    PlasticLayerState::new(k),
                    PlasticLayerState::new(k),
                    PlasticLayerState::new(k),
                ]),
            },
            steps: 0,
        }
    }

    /// Enter `state` into the graph. LSTM controller states always start
    /// from zero; plastic traces and the stack are taken from `state` as
    /// constants.
    pub fn attach<T: Scalar>(&self, g: &mut Graph<T>, state: &MemoryState<T>) -> Result<TracedMemory> {
        let stack = g.constant(state.stack.clone());
        let controllers = match (self, &state.traces) {
            (MemoryCell::Baseline { read, write }, _) => {
                TracedControllers::Baseline([read.zero_state(g), write.zero_state(g)])
            }
            (MemoryCell::Plastic { .. }, Some([r, o, w])) => TracedControllers::Plastic([
                TracedPlasticState::attach(g, r),
                TracedPlasticState::attach(g, o),
                TracedPlasticState::attach(g, w),
            ]),
            (MemoryCell::Plastic { .. }, None) => {
                return Err(Error::state("plastic memory state is missing its traces"))
            }
        };
        Ok(TracedMemory { stack, controllers })
    }

    pub fn detach<T: Scalar>(&self, g: &Graph<T>, traced: &TracedMemory, steps: u64) -> MemoryState<T> {
        MemoryState {
            stack: g.value(traced.stack).clone(),
            traces: match &traced.controllers {
                TracedControllers::Baseline(_) => None,
                TracedControllers::Plastic([r, o, w]) => Some([r.detach(g), o.detach(g), w.detach(g)]),
            },
            steps,
        }
    }

    pub fn record_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        tape: &ParameterTape<T>,
        traced: &mut TracedMemory,
        x: NodeId,
        eta: T,
    ) -> StepNodes {
        match (self, &mut traced.controllers) {
            (MemoryCell::Baseline { read, write }, TracedControllers::Baseline(states)) => {
                let r = (g.param(tape, read.w_ih), g.param(tape, read.w_hh), g.param(tape, read.b));
                let w = (g.param(tape, write.w_ih), g.param(tape, write.w_hh), g.param(tape, write.b));
                record_baseline_memory_step(g, r, w, states, &mut traced.stack, x, read.hidden)
            }
            (MemoryCell::Plastic { read, out, write }, TracedControllers::Plastic(traces)) => {
                let mut pair = |l: &PlasticLayer| (g.param(tape, l.w), g.param(tape, l.alpha));
                let ctrl = [pair(read), pair(out), pair(write)];
                record_plastic_memory_step(g, ctrl, traces, &mut traced.stack, x, eta)
            }
            _ => unreachable!("traced state built by attach matches the cell kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_memory_attends_uniformly() {
        let m = init_memory::<f64>(3, 4, MemoryInit::Zeros).unwrap();
        assert_eq!(m, Matrix::zeros(3, 4));
        let z = attend(&[0.3, -1.0, 2.0, 0.1], &m).unwrap();
        for p in z {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(init_memory::<f64>(0, 4, MemoryInit::Zeros).is_err());
    }

    #[test]
    fn seeded_init_reproducible() {
        let a = init_memory::<f64>(4, 3, MemoryInit::Uniform { seed: 11 }).unwrap();
        let b = init_memory::<f64>(4, 3, MemoryInit::Uniform { seed: 11 }).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn near_one_hot_attention() {
        let m = Matrix::new(2, 2, vec![10.0, 0.0, 0.0, 10.0]).unwrap();
        let z = attend(&[1.0, 0.0], &m).unwrap();
        let e = (-10f64).exp();
        assert!((z[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((z[1] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn read_one_hot_and_uniform() {
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(read_slots(&[0.0, 1.0], &m), vec![5.0, 7.0, 9.0]);
        assert_eq!(read_slots(&[0.5, 0.5], &m), vec![3.0, 4.5, 6.0]);
    }

    #[test]
    fn write_examples() {
        let m = Matrix::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let out = write_slots(&m, &[0.25, 0.75], &[4.0, 4.0]);
        assert_eq!(out.data(), &[1.75, 1.75, 3.0, 3.0]);
        assert_eq!(write_slots(&m, &[0.0, 0.0], &[4.0, 4.0]), m);
    }

    #[test]
    fn zero_baseline_cell_is_fixed_point() {
        let mut cell = BaselineMemoryCell::<f64> {
            read: LstmController {
                params: LstmParams::zeros(3, 3),
                state: LstmState::zeros(3),
            },
            write: LstmController {
                params: LstmParams::zeros(3, 3),
                state: LstmState::zeros(3),
            },
            stack: Matrix::zeros(2, 3),
        };
        let out = cell.step(&[0.5, -0.5, 1.0]).unwrap();
        assert_eq!(out.output, vec![0.0; 3]);
        assert_eq!(out.attention, vec![0.5, 0.5]);
        assert_eq!(cell.stack, Matrix::zeros(2, 3));
    }

    #[test]
    fn single_slot_takes_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cell = BaselineMemoryCell::<f64>::random(3, 1, MemoryInit::Uniform { seed: 1 }, &mut rng).unwrap();
        for t in 0..3 {
            let before = cell.clone();
            let out = cell.step(&[0.1 * t as f64, 0.2, -0.3]).unwrap();
            assert_eq!(out.attention, vec![1.0]);
            assert_eq!(out.output, before.stack.row(0).to_vec());
            // the stored row is the write controller's output
            let (update, _) =
                crate::recurrent::lstm_step(&before.write.params, &before.write.state, &out.output).unwrap();
            assert_eq!(cell.stack.row(0), update.as_slice());
        }
    }

    #[test]
    fn plastic_zero_everything_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cell = PlasticMemoryCell::<f64>::random(3, 2, 0.5, MemoryInit::Zeros, &mut rng).unwrap();
        let out = cell.step(&[0.4, 0.2, -0.9]).unwrap();
        assert_eq!(out.output, vec![0.0; 3]);
    }

    #[test]
    fn plastic_rejects_mixed_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cell = PlasticMemoryCell::<f64>::random(2, 2, 0.5, MemoryInit::Zeros, &mut rng).unwrap();
        cell.write.params.eta = 0.1;
        assert!(cell.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn memory_kind_parses() {
        assert_eq!("plastic".parse::<MemoryKind>().unwrap(), MemoryKind::Plastic);
        assert!("lstm".parse::<MemoryKind>().is_err());
    }
}
