//! Adam optimisation, epoch loop with best-validation retention, evaluation
//! with record-level voting, k-fold splits and one-at-a-time sweeps.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{group_by_record, majority_vote, validate_dataset, LabeledSequence};
use crate::error::{Error, Result};
use crate::model::{argmax, cross_entropy, Classifier, ModelConfig};
use crate::numerics::{Matrix, ParameterTape};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Samples per update; gradients are averaged over the batch.
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1,
            val_fraction: 0.2,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        open_unit("val_fraction", self.val_fraction)?;
        open_unit("beta1", self.beta1)?;
        open_unit("beta2", self.beta2)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter of a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(tape: &ParameterTape<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            tape.entries()
                .iter()
                .map(|e| Matrix::zeros(e.value.rows(), e.value.cols()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn from_config(tape: &ParameterTape<T>, cfg: &TrainConfig) -> Self {
        Self::new(tape, cfg.beta1, cfg.beta2, cfg.eps)
    }
}

/// One bias-corrected Adam update from the gradients held in `tape`.
pub fn adam_step<T: Scalar>(tape: &mut ParameterTape<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if !tape.grads_ready() {
        return Err(Error::state("adam_step called before backward"));
    }
    if state.m.len() != tape.len() {
        return Err(Error::state("Adam moments do not match the parameter tape"));
    }
    state.step += 1;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::one() - b1.powi(state.step as i32);
    let c2 = T::one() - b2.powi(state.step as i32);
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for ((entry, m), v) in tape.entries_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grads = entry.grad.data();
        for (((p, &g), m), v) in entry
            .value
            .data_mut()
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were retained, if any training happened.
    pub best_epoch: Option<usize>,
    pub best_val_acc: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Record-level split: whole records go to validation, chosen by `seed`.
/// Returns `(train, validation)` window indices in dataset order.
pub fn split_validation<T>(data: &[LabeledSequence<T>], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut groups = group_by_record(data);
    if groups.len() < 2 {
        return Err(Error::invalid("a validation split needs at least two records"));
    }
    let n_val = ((groups.len() as f64 * val_fraction).round() as usize).clamp(1, groups.len() - 1);
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val: Vec<usize> = groups[..n_val].iter().flat_map(|(_, ix)| ix.iter().copied()).collect();
    let mut train: Vec<usize> = groups[n_val..].iter().flat_map(|(_, ix)| ix.iter().copied()).collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Train in place. Validation runs on a clone so persistent memory state
/// only advances through training samples. The parameters (and memory
/// state) from the best validation epoch are kept; ties go to the earlier
/// epoch.
pub fn train<T: Scalar>(model: &mut Classifier<T>, data: &[LabeledSequence<T>], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mc = model.config().clone();
    validate_dataset(data, mc.input_dim, mc.num_classes)?;
    let (mut train_ix, val_ix) = split_validation(data, cfg.val_fraction, cfg.seed)?;
    let val: Vec<LabeledSequence<T>> = val_ix.iter().map(|&i| data[i].clone()).collect();
    let mut report = TrainReport {
        history: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_val_acc: f64::NAN,
        train_indices: train_ix.clone(),
        val_indices: val_ix,
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::from_config(model.params(), cfg);
    let mut acc: Vec<Matrix<T>> = adam.m.clone();
    let mut best: Option<Classifier<T>> = None;
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            train_ix.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (n, &i) in train_ix.iter().enumerate() {
            let seq = &data[i];
            let (loss, probs) = model.loss_and_grad(&seq.steps, seq.label)?;
            if !loss.is_finite() || !model.params().entries().iter().all(|e| e.grad.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    message: format!("epoch {epoch}, sample {n} (record {:?})", seq.record_id),
                    checkpoint: Box::new(model.to_checkpoint(true)),
                });
            }
            loss_sum += loss.as_f64();
            correct += usize::from(argmax(&probs) == seq.label);
            for (a, e) in acc.iter_mut().zip(model.params().entries()) {
                for (x, &g) in a.data_mut().iter_mut().zip(e.grad.data()) {
                    *x += g;
                }
            }
            let in_batch = n % cfg.batch_size + 1;
            if in_batch == cfg.batch_size || n + 1 == train_ix.len() {
                let scale = T::of(1.0 / in_batch as f64);
                for (a, e) in acc.iter_mut().zip(model.params_mut().entries_mut()) {
                    for (g, x) in e.grad.data_mut().iter_mut().zip(a.data_mut()) {
                        *g = *x * scale;
                        *x = T::zero();
                    }
                }
                adam_step(model.params_mut(), &mut adam, cfg.lr)?;
            }
        }
        let mut probe = model.clone();
        let v = evaluate(&mut probe, &val, false)?;
        let n = train_ix.len() as f64;
        report.history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: v.loss,
            val_acc: v.accuracy,
        });
        log::info!(
            "epoch {epoch}: train_loss={:.5} train_acc={:.4} val_loss={:.5} val_acc={:.4}",
            loss_sum / n,
            correct as f64 / n,
            v.loss,
            v.accuracy
        );
        if report.best_epoch.is_none() || v.accuracy > report.best_val_acc {
            report.best_epoch = Some(epoch);
            report.best_val_acc = v.accuracy;
            best = Some(model.clone());
        }
    }
    if let Some(best) = best {
        *model = best;
    }
    Ok(report)
}

/// Metrics CSV with an `lr` comment line ahead of the header.
pub fn metrics_csv(history: &[EpochMetrics], lr: f64) -> String {
    let mut out = format!("# lr={lr}\nepoch,train_loss,train_acc,val_loss,val_acc\n");
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics], lr: f64) -> Result<()> {
    std::fs::write(path, metrics_csv(history, lr)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub label: usize,
    /// Items whose true class is `label`.
    pub support: usize,
    /// Items predicted as `label`.
    pub predicted: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Mean window-level cross-entropy.
    pub loss: f64,
    pub voted: bool,
    pub per_class: Vec<ClassCounts>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Score `model` on `data`. With `vote`, windows sharing a record id are
/// combined by [`majority_vote`] and each record counts once. Persistent
/// memory state advances through the dataset in order.
pub fn evaluate<T: Scalar>(model: &mut Classifier<T>, data: &[LabeledSequence<T>], vote: bool) -> Result<EvalMetrics> {
    let mc = model.config().clone();
    validate_dataset(data, mc.input_dim, mc.num_classes)?;
    if vote {
        if let Some(seq) = data.iter().find(|s| s.record_id.is_empty()) {
            return Err(Error::invalid(format!(
                "voting needs record ids; a window with label {} has none",
                seq.label
            )));
        }
    }
    let mut probs = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for seq in data {
        let p = model.probabilities(&seq.steps)?;
        loss += cross_entropy(&p, seq.label)?.as_f64();
        probs.push(p);
    }
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let pairs: Vec<(usize, usize)> = if vote {
        group_by_record(data)
            .into_iter()
            .map(|(id, ix)| {
                let label = data[ix[0]].label;
                if ix.iter().any(|&i| data[i].label != label) {
                    return Err(Error::invalid(format!("record {id:?} has windows with different labels")));
                }
                let p: Vec<usize> = ix.iter().map(|&i| preds[i]).collect();
                let q: Vec<Vec<T>> = ix.iter().map(|&i| probs[i].clone()).collect();
                Ok((label, majority_vote(&p, &q)?))
            })
            .collect::<Result<_>>()?
    } else {
        data.iter().zip(&preds).map(|(s, &p)| (s.label, p)).collect()
    };
    let c = mc.num_classes;
    let mut confusion = vec![vec![0usize; c]; c];
    for &(t, p) in &pairs {
        confusion[t][p] += 1;
    }
    let per_class = (0..c)
        .map(|label| ClassCounts {
            label,
            support: confusion[label].iter().sum(),
            predicted: confusion.iter().map(|row| row[label]).sum(),
            correct: confusion[label][label],
        })
        .collect();
    let correct = (0..c).map(|i| confusion[i][i]).sum();
    Ok(EvalMetrics {
        accuracy: correct as f64 / pairs.len() as f64,
        correct,
        total: pairs.len(),
        loss: loss / data.len() as f64,
        voted: vote,
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Record-level k-fold partition: records are shuffled by `seed` and dealt
/// round-robin, so fold sizes (in records) differ by at most one.
pub fn kfold_split<T>(data: &[LabeledSequence<T>], folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    let mut groups = group_by_record(data);
    if folds > groups.len() {
        return Err(Error::invalid(format!("{folds} folds but only {} records", groups.len())));
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut owner = vec![0usize; data.len()];
    for (g, (_, ix)) in groups.iter().enumerate() {
        for &i in ix {
            owner[i] = g % folds;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train) = (0..data.len()).partition(|&i| owner[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// Values for each swept hyperparameter; each is varied alone while the
/// others keep the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub k: Vec<usize>,
    pub l: Vec<usize>,
    pub eta: Vec<f64>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.k.len() + self.l.len() + self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param_name: String,
    pub param_value: f64,
    pub val_acc: f64,
}

/// One-at-a-time sweep. Points run in parallel on independent models;
/// settings the model rejects are skipped with a warning.
pub fn hyper_sweep<T: Scalar>(
    base: &ModelConfig,
    grid: &SweepGrid,
    data: &[LabeledSequence<T>],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let mut points: Vec<(&str, f64, ModelConfig)> = Vec::with_capacity(grid.len());
    points.extend(grid.k.iter().map(|&k| ("k", k as f64, ModelConfig { embed_dim: k, ..base.clone() })));
    points.extend(grid.l.iter().map(|&l| ("l", l as f64, ModelConfig { memory_len: l, ..base.clone() })));
    points.extend(grid.eta.iter().map(|&eta| ("eta", eta, ModelConfig { eta, ..base.clone() })));
    let rows: Vec<Option<SweepRow>> = points
        .into_par_iter()
        .map(|(name, value, mc)| {
            let mut model = match Classifier::<T>::new(mc) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("skipping {name}={value}: {e}");
                    return Ok(None);
                }
            };
            let report = train(&mut model, data, cfg)?;
            Ok(Some(SweepRow {
                param_name: name.to_string(),
                param_value: value,
                val_acc: report.best_val_acc,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("param_name,param_value,val_acc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.param_name, r.param_value, r.val_acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy(n: usize) -> Vec<LabeledSequence> {
        (0..n)
            .map(|i| {
                let v = if i % 2 == 0 { 0.5 } else { -0.5 };
                LabeledSequence::new(vec![vec![v]; 5], i % 2, format!("r{i}")).unwrap()
            })
            .collect()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            memory_len: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn adam_first_step_scalar() {
        let mut tape = ParameterTape::<f64>::new();
        let id = tape.register("p", Matrix::scalar(0.0)).unwrap();
        let mut st = AdamState::new(&tape, 0.9, 0.999, 1e-8);
        assert!(adam_step(&mut tape, &mut st, 1e-3).is_err());
        tape.mark_grads_ready();
        tape.grad_mut(id).set(0, 0, 1.0);
        adam_step(&mut tape, &mut st, 1e-3).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((tape.value(id).get(0, 0) - expected).abs() < 1e-18);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr_are_no_ops() {
        let mut tape = ParameterTape::<f64>::new();
        let id = tape.register("p", Matrix::column(&[0.3, -0.7])).unwrap();
        tape.mark_grads_ready();
        let mut st = AdamState::new(&tape, 0.9, 0.999, 1e-8);
        adam_step(&mut tape, &mut st, 1e-3).unwrap();
        assert_eq!(tape.value(id).data(), &[0.3, -0.7]);
        assert!(st.m[0].data().iter().chain(st.v[0].data()).all(|&x| x == 0.0));
        tape.grad_mut(id).fill(2.0);
        for _ in 0..5 {
            adam_step(&mut tape, &mut st, 0.0).unwrap();
        }
        assert_eq!(tape.value(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn validation_split_is_record_level() {
        let mut data = toy(10);
        data[3].record_id = "r2".into();
        let (tr, va) = split_validation(&data, 0.2, 3).unwrap();
        assert_eq!(tr.len() + va.len(), 10);
        assert!(va.contains(&2) == va.contains(&3));
        assert!(split_validation(&toy(1), 0.2, 0).is_err());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = Classifier::<f64>::new(small()).unwrap();
        let before = m.params().clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &toy(6), &cfg).unwrap();
        assert!(r.history.is_empty());
        assert_eq!(m.params().to_named(), before.to_named());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = Classifier::<f64>::new(small()).unwrap();
        assert!(matches!(
            train(&mut m, &[], &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn always_class_zero_scores_half() {
        let mut m = Classifier::<f64>::new(small()).unwrap();
        let (w, b) = m.head();
        m.params_mut().value_mut(w).fill(0.0);
        m.params_mut().value_mut(b).set(0, 0, 5.0);
        let e = evaluate(&mut m, &toy(10), false).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.confusion, vec![vec![5, 0], vec![5, 0]]);
        assert_eq!(e.per_class[0].predicted, 10);
    }

    #[test]
    fn voting_aggregates_windows() {
        let mut m = Classifier::<f64>::new(small()).unwrap();
        let (w, b) = m.head();
        m.params_mut().value_mut(w).fill(0.0);
        m.params_mut().value_mut(b).set(0, 0, 5.0);
        let mut data = toy(4);
        for s in &mut data {
            s.label = 0;
            s.record_id = "same".into();
        }
        let e = evaluate(&mut m, &data, true).unwrap();
        assert_eq!((e.correct, e.total), (1, 1));
        data[0].record_id.clear();
        assert!(evaluate(&mut m, &data, true).is_err());
    }

    #[test]
    fn kfold_ten_records_five_folds() {
        let folds = kfold_split(&toy(10), 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        assert!(folds.iter().all(|f| f.test.len() == 2 && f.train.len() == 8));
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, kfold_split(&toy(10), 5, 1).unwrap());
        assert!(kfold_split(&toy(3), 4, 0).is_err());
        assert!(kfold_split(&toy(3), 1, 0).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let h = [EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 1.0,
            val_loss: 0.25,
            val_acc: 0.75,
        }];
        assert_eq!(
            metrics_csv(&h, 1e-3),
            "# lr=0.001\nepoch,train_loss,train_acc,val_loss,val_acc\n1,0.5,1,0.25,0.75\n"
        );
    }

    #[test]
    fn sweep_skips_invalid_settings() {
        let grid = SweepGrid {
            k: vec![0, 4],
            l: vec![],
            eta: vec![2.0],
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let rows = hyper_sweep(&small(), &grid, &toy(6), &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].param_name, "k");
        assert!(hyper_sweep(&small(), &SweepGrid::default(), &toy(6), &cfg).is_err());
    }
}
