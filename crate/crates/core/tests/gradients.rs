mod support {
    pub mod oracles;
}

use pnmn_core::numerics::oja_update;
use pnmn_core::{Classifier64, Matrix64, MemoryKind, ModelConfig, Oracle, TraceLifetime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{fixed_controller_outputs, random_seq};

fn small(kind: MemoryKind, lifetime: TraceLifetime, seed: u64) -> Classifier64 {
    Classifier64::new(ModelConfig {
        input_dim: 2,
        embed_dim: 4,
        memory_len: 2,
        memory_kind: kind,
        trace_lifetime: lifetime,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn check(model: &Classifier64, seq: &[Vec<f64>], label: usize) -> f64 {
    let report = model.gradcheck(seq, label, 1e-5, 1e-4, Oracle::Quad).unwrap();
    assert!(report.passed, "{report}");
    let names: Vec<&str> = report.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names.len(), model.params().len(), "{names:?}");
    report.max_rel_err
}

#[test]
fn plastic_classifier_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..3 {
        let model = small(MemoryKind::Plastic, TraceLifetime::PerSequence, seed);
        let seq = random_seq(&mut rng, 3, 2);
        assert!(check(&model, &seq, (seed % 2) as usize) < 1e-4);
    }
}

#[test]
fn baseline_classifier_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = small(MemoryKind::Baseline, TraceLifetime::PerSequence, 5);
    check(&model, &random_seq(&mut rng, 3, 2), 1);
}

#[test]
fn gradients_through_a_carried_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = small(MemoryKind::Plastic, TraceLifetime::Persistent, 2);
    model.forward(&random_seq(&mut rng, 4, 2)).unwrap();
    assert!(model.named_matrix("read_hebb").unwrap().max_abs() > 0.0);
    check(&model, &random_seq(&mut rng, 3, 2), 0);
}

#[test]
fn zero_plasticity_reduces_to_fixed_tanh_controllers() {
    let mut model = Classifier64::new(ModelConfig {
        input_dim: 3,
        embed_dim: 6,
        memory_len: 5,
        seed: 21,
        ..ModelConfig::default()
    })
    .unwrap();
    for name in ["mem.read.alpha", "mem.out.alpha", "mem.write.alpha"] {
        let id = model.params().id(name).unwrap();
        model.params_mut().value_mut(id).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(1..=12);
        let seq = random_seq(&mut rng, len, 3);
        let got = model.forward(&seq).unwrap().memory_outputs;
        let want = fixed_controller_outputs(&model, &seq);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().flatten().zip(want.iter().flatten()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-12, "max deviation {worst:e}");
}

#[test]
fn scalar_trace_converges_as_closed_form() {
    let (a, b, eta) = (1.0, 1.0, 0.5);
    let mut h = Matrix64::zeros(1, 1);
    let mut reached = None;
    for t in 1..=80 {
        h = oja_update(&h, &[a], &[b], eta);
        let closed = 1.0 - (1.0f64 - eta).powi(t);
        assert!((h.get(0, 0) - closed).abs() < 1e-15, "step {t}");
        if reached.is_none() && (h.get(0, 0) - 1.0).abs() < 1e-10 {
            reached = Some(t);
        }
    }
    // 0.5^t < 1e-10 first holds at t = 34.
    assert_eq!(reached, Some(34));
    assert!((h.get(0, 0) - 1.0).abs() < 1e-10);
}

#[test]
fn unit_scale_models_pass_with_wide_oracle() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut model = small(MemoryKind::Plastic, TraceLifetime::Persistent, seed);
        for e in 0..model.params().len() {
            let id = model.params().id(&model.params().entries()[e].name.clone()).unwrap();
            for x in model.params_mut().value_mut(id).data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        let mut ckpt = model.to_checkpoint(false);
        let (l, k) = model.initial_stack().shape();
        ckpt.initial_memory = Matrix64::from_fn(l, k, |_, _| rng.gen_range(-1.0..1.0)).to_named("initial_memory");
        let model = Classifier64::from_checkpoint(&ckpt).unwrap();
        check(&model, &random_seq(&mut rng, 3, 2), 0);
    }
}

/// At h=1e-5 an f64 oracle carries about 1e-11 of rounding noise, which the
/// 1e-8 denominator floor turns into ~1e-3 relative error on the many
/// near-zero gradients of a freshly initialised model.
#[test]
fn wide_oracle_removes_rounding_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = small(MemoryKind::Plastic, TraceLifetime::PerSequence, 0);
    let seq = random_seq(&mut rng, 3, 2);
    let fine = model.gradcheck(&seq, 0, 1e-5, 1e-4, Oracle::Native).unwrap();
    let quad = model.gradcheck(&seq, 0, 1e-5, 1e-4, Oracle::Quad).unwrap();
    assert!(quad.max_rel_err < fine.max_rel_err / 100.0, "{fine} / {quad}");
}
