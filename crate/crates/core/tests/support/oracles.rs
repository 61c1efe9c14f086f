//! Independent reference computations shared by the gradient tests and the
//! acceptance suite.

use pnmn_core::recurrent::encode_sequence;
use pnmn_core::{Classifier64, Matrix64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_seq(rng: &mut ChaCha8Rng, len: usize, d: usize) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn tanh_layer(w: &Matrix64, x: &[f64]) -> Vec<f64> {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| w.get(i, j) * x[i]).sum::<f64>().tanh())
        .collect()
}

/// Memory with three fixed `tanh(w^T x)` controllers, written out directly.
pub fn fixed_controller_outputs(model: &Classifier64, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = model.params();
    let w = |name: &str| p.value(p.id(name).unwrap()).clone();
    let (rw, ow, ww) = (w("mem.read.w"), w("mem.out.w"), w("mem.write.w"));
    let embedded = encode_sequence(&model.encoder().params(p), seq).unwrap();
    let mut stack = model.initial_stack().clone();
    let (l, k) = stack.shape();
    let mut outputs = Vec::new();
    for e in &embedded {
        let q = tanh_layer(&rw, e);
        let scores: Vec<f64> = (0..l).map(|s| (0..k).map(|c| stack.get(s, c) * q[c]).sum()).collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = ex.iter().sum();
        let z: Vec<f64> = ex.iter().map(|v| v / total).collect();
        let beta: Vec<f64> = (0..k).map(|c| (0..l).map(|s| z[s] * stack.get(s, c)).sum()).collect();
        let m = tanh_layer(&ow, &beta);
        let update = tanh_layer(&ww, &m);
        for s in 0..l {
            for c in 0..k {
                stack.set(s, c, (1.0 - z[s]) * stack.get(s, c) + z[s] * update[c]);
            }
        }
        outputs.push(m);
    }
    outputs
}
