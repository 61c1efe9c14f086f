//! Property bodies shared by the core property tests and the acceptance
//! suite. Each returns `Err` with a description instead of panicking.

use pnmn_core::data::{
    flatten_feature_map, majority_vote, minmax_scale, sliding_window, unflatten_feature_map, window_stride,
    FeatureBlock, LabeledSequence,
};
use pnmn_core::memory::{attend, write_slots};
use pnmn_core::training::kfold_split;
use pnmn_core::{Graph64, Matrix64};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if ok {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

#[derive(Debug, Clone)]
pub struct MemoryCase {
    pub l: usize,
    pub k: usize,
    pub stack: Vec<f64>,
    pub query: Vec<f64>,
    pub update: Vec<f64>,
    pub slot: usize,
    pub scores: Vec<f64>,
}

pub fn memory_case() -> impl Strategy<Value = MemoryCase> {
    (1..=8usize, 1..=8usize).prop_flat_map(|(l, k)| {
        (
            vec(-2.0..2.0f64, l * k),
            vec(-3.0..3.0f64, k),
            vec(-1.0..1.0f64, k),
            0..l,
            vec(-6.0..6.0f64, l),
        )
            .prop_map(move |(stack, query, update, slot, scores)| MemoryCase {
                l,
                k,
                stack,
                query,
                update,
                slot,
                scores,
            })
    })
}

fn simplex(scores: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|v| v / total).collect()
}

/// One-hot writes overwrite exactly one slot, soft writes stay inside the
/// segment between old entry and update, and attention is a distribution.
pub fn memory_laws(c: &MemoryCase) -> Result<(), TestCaseError> {
    let stack = Matrix64::new(c.l, c.k, c.stack.clone()).unwrap();

    let z = attend(&c.query, &stack).unwrap();
    let total: f64 = z.iter().sum();
    ensure((total - 1.0).abs() < 1e-12, || format!("attention sums to {total}"))?;
    ensure(z.iter().all(|&p| p >= 0.0), || format!("negative attention {z:?}"))?;

    let mut one_hot = vec![0.0; c.l];
    one_hot[c.slot] = 1.0;
    let mut g = Graph64::new();
    let (s, w, u) = (g.constant(stack.clone()), g.input(&one_hot), g.input(&c.update));
    let node = g.slot_blend(s, w, u);
    for written in [write_slots(&stack, &one_hot, &c.update), g.value(node).clone()] {
        for r in 0..c.l {
            let want = if r == c.slot { &c.update[..] } else { stack.row(r) };
            ensure(written.row(r) == want, || format!("row {r} after one-hot write to {}", c.slot))?;
        }
    }

    for weights in [simplex(&c.scores), z] {
        let written = write_slots(&stack, &weights, &c.update);
        for r in 0..c.l {
            for j in 0..c.k {
                let (old, new, upd) = (stack.get(r, j), written.get(r, j), c.update[j]);
                let slack = 4.0 * f64::EPSILON * old.abs().max(upd.abs());
                ensure(new >= old.min(upd) - slack && new <= old.max(upd) + slack, || {
                    format!("entry ({r},{j}) = {new} outside [{old}, {upd}] at weight {}", weights[r])
                })?;
            }
        }
    }
    Ok(())
}

pub fn window_case() -> impl Strategy<Value = (usize, usize, usize, f64)> {
    (0..200usize, 1..=3usize, 1..60usize, 0.0..0.95f64)
}

pub fn window_laws(&(t, d, len, overlap): &(usize, usize, usize, f64)) -> Result<(), TestCaseError> {
    let signal: Vec<Vec<usize>> = (0..t).map(|i| (0..d).map(|c| i * d + c).collect()).collect();
    let windows = sliding_window(&signal, len, overlap).unwrap();
    let stride = window_stride(len, overlap);
    let nominal = len as f64 * (1.0 - overlap);
    ensure(stride >= 1 && (stride as f64 - nominal).abs() <= 0.5 || stride == 1 && nominal < 0.5, || {
        format!("stride {stride} for nominal {nominal}")
    })?;
    let count = if len > t { 0 } else { (t - len) / stride + 1 };
    ensure(windows.len() == count, || format!("{} windows, expected {count}", windows.len()))?;
    for (i, w) in windows.iter().enumerate() {
        ensure(w[..] == signal[i * stride..i * stride + len], || format!("window {i} misplaced"))?;
    }
    Ok(())
}

pub fn minmax_case() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..30usize, 1..=4usize, any::<bool>()).prop_flat_map(|(t, d, constant_first)| {
        vec(vec(-100.0..100.0f64, d), t).prop_map(move |mut w| {
            if constant_first {
                w.iter_mut().for_each(|row| row[0] = 3.5);
            }
            w
        })
    })
}

pub fn minmax_laws(window: &Vec<Vec<f64>>) -> Result<(), TestCaseError> {
    let once = minmax_scale(window).unwrap();
    let twice = minmax_scale(&once).unwrap();
    for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
        ensure((0.0..=1.0).contains(a), || format!("scaled value {a}"))?;
        ensure((a - b).abs() < 1e-12, || format!("not idempotent: {a} vs {b}"))?;
    }
    for c in 0..window[0].len() {
        let col: Vec<f64> = once.iter().map(|r| r[c]).collect();
        let constant = window.iter().all(|r| r[c] == window[0][c]);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let want = if constant { (0.0, 0.0) } else { (0.0, 1.0) };
        ensure((lo, hi) == want, || format!("channel {c} spans [{lo}, {hi}]"))?;
    }
    Ok(())
}

pub fn block_case() -> impl Strategy<Value = FeatureBlock> {
    (1..6usize, 1..6usize, 1..6usize).prop_flat_map(|(h, w, c)| {
        vec(-5.0..5.0f64, h * w * c).prop_map(move |data| FeatureBlock::new(h, w, c, data).unwrap())
    })
}

pub fn flatten_laws(block: &FeatureBlock) -> Result<(), TestCaseError> {
    let steps = flatten_feature_map(block);
    ensure(steps.len() == block.h * block.w && steps.iter().all(|s| s.len() == block.c), || {
        "flattened shape".into()
    })?;
    let back = unflatten_feature_map(&steps, block.h, block.w).unwrap();
    ensure(&back == block, || "unflatten(flatten(b)) != b".into())?;
    ensure(flatten_feature_map(&back) == steps, || "flatten(unflatten(s)) != s".into())
}

/// Window predictions with probabilities on a 1/64 grid, so every sum is
/// exact and probability ties are reachable.
pub fn vote_case() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<f64>>, Vec<usize>)> {
    (2..=4usize, 1..12usize).prop_flat_map(|(classes, n)| {
        let row = vec(0..=64u32, classes).prop_map(|v| v.into_iter().map(|x| x as f64 / 64.0).collect::<Vec<f64>>());
        (
            vec(0..classes, n),
            vec(row, n),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
    })
}

fn vote_oracle(preds: &[usize], probs: &[Vec<f64>]) -> usize {
    let classes = probs[0].len();
    let count = |c: usize| preds.iter().filter(|&&p| p == c).count();
    let mass = |c: usize| probs.iter().map(|p| p[c]).sum::<f64>();
    let top = (0..classes).map(count).max().unwrap();
    let modal: Vec<usize> = (0..classes).filter(|&c| count(c) == top).collect();
    let best = modal.iter().map(|&c| mass(c)).fold(f64::NEG_INFINITY, f64::max);
    *modal.iter().find(|&&c| mass(c) == best).unwrap()
}

pub fn vote_laws((preds, probs, perm): &(Vec<usize>, Vec<Vec<f64>>, Vec<usize>)) -> Result<(), TestCaseError> {
    let got = majority_vote(preds, probs).unwrap();
    let want = vote_oracle(preds, probs);
    ensure(got == want, || format!("vote {got}, oracle {want}"))?;
    let p2: Vec<usize> = perm.iter().map(|&i| preds[i]).collect();
    let q2: Vec<Vec<f64>> = perm.iter().map(|&i| probs[i].clone()).collect();
    let permuted = majority_vote(&p2, &q2).unwrap();
    ensure(permuted == got, || format!("permutation changed vote {got} -> {permuted}"))
}

pub fn kfold_case() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
    vec(1..=4usize, 2..20).prop_flat_map(|windows| {
        let max_folds = windows.len().min(6);
        (Just(windows), 2..=max_folds, any::<u64>())
    })
}

pub fn kfold_laws((windows, folds, seed): &(Vec<usize>, usize, u64)) -> Result<(), TestCaseError> {
    let data: Vec<LabeledSequence> = windows
        .iter()
        .enumerate()
        .flat_map(|(r, &n)| (0..n).map(move |_| LabeledSequence::new(vec![vec![0.0]], r % 2, format!("r{r}")).unwrap()))
        .collect();
    let split = kfold_split(&data, *folds, *seed).unwrap();
    ensure(split.len() == *folds, || format!("{} folds", split.len()))?;
    let mut tested = vec![0usize; data.len()];
    let mut record_counts = Vec::new();
    for (f, fold) in split.iter().enumerate() {
        let mut all: Vec<usize> = fold.train.iter().chain(&fold.test).copied().collect();
        all.sort_unstable();
        ensure(all == (0..data.len()).collect::<Vec<_>>(), || format!("fold {f} is not a partition"))?;
        let ids = |ix: &[usize]| ix.iter().map(|&i| data[i].record_id.clone()).collect::<std::collections::HashSet<_>>();
        let (train_ids, test_ids) = (ids(&fold.train), ids(&fold.test));
        ensure(train_ids.is_disjoint(&test_ids), || format!("fold {f} splits a record"))?;
        record_counts.push(test_ids.len());
        fold.test.iter().for_each(|&i| tested[i] += 1);
    }
    ensure(tested.iter().all(|&n| n == 1), || "a window is tested other than once".into())?;
    let (lo, hi) = (record_counts.iter().min().unwrap(), record_counts.iter().max().unwrap());
    ensure(hi - lo <= 1, || format!("fold record counts {record_counts:?}"))
}
