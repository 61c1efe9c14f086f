//! Diagnostics over trained models: output sparsity, 2-D PCA of memory
//! embeddings, matrix snapshots and the runtime benchmark.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSequence;
use crate::error::{Error, Result};
use crate::memory::MemoryKind;
use crate::model::{Classifier, ModelConfig, TraceLifetime};
use crate::scalar::Scalar;

pub const DEFAULT_SPARSITY_EPS: f64 = 0.05;

/// Fraction of entries with `|v_i| < eps`. An empty vector counts as fully
/// sparse.
pub fn sparsity<T: Scalar>(v: &[T], eps: f64) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    v.iter().filter(|x| x.as_f64().abs() < eps).count() as f64 / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub points: Vec<[f64; 2]>,
    /// Eigenvalues of the sample covariance for the two kept directions.
    pub explained: [f64; 2],
    pub total_variance: f64,
    /// Unit principal directions, each with its first nonzero loading
    /// positive.
    pub components: [Vec<f64>; 2],
}

/// Project mean-centred samples onto the top two covariance eigenvectors.
pub fn pca_2d<T: Scalar>(samples: &[Vec<T>]) -> Result<Pca> {
    if samples.len() < 3 {
        return Err(Error::invalid(format!("PCA needs at least 3 samples, got {}", samples.len())));
    }
    let k = samples[0].len();
    if k == 0 || samples.iter().any(|s| s.len() != k) {
        return Err(Error::invalid("PCA samples must share a positive dimension"));
    }
    let n = samples.len();
    let x = DMatrix::from_fn(n, k, |i, j| samples[i][j].as_f64());
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, k, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvectors.amax().max(f64::MIN_POSITIVE);
    let component = |slot: usize| -> (Vec<f64>, f64) {
        let Some(&c) = order.get(slot) else {
            return (vec![0.0; k], 0.0);
        };
        let value = eig.eigenvalues[c].max(0.0);
        if value == 0.0 {
            return (vec![0.0; k], 0.0);
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        if v.iter().find(|x| x.abs() > 1e-12 * scale).is_some_and(|&x| x < 0.0) {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        (v, value)
    };
    let (c0, e0) = component(0);
    let (c1, e1) = component(1);
    let points = (0..n)
        .map(|i| {
            let row = centred.row(i);
            let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&c0), dot(&c1)]
        })
        .collect();
    Ok(Pca {
        points,
        explained: [e0, e1],
        total_variance,
        components: [c0, c1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSample {
    pub record_id: String,
    pub label: usize,
    /// Memory output after the final step.
    pub m: Vec<f64>,
}

/// Final memory output for every sequence, in dataset order.
pub fn extract_embeddings<T: Scalar>(model: &mut Classifier<T>, data: &[LabeledSequence<T>]) -> Result<Vec<EmbeddingSample>> {
    data.iter()
        .map(|seq| {
            let fwd = model.forward(&seq.steps)?;
            let last = fwd.memory_outputs.last().expect("non-empty sequence");
            Ok(EmbeddingSample {
                record_id: seq.record_id.clone(),
                label: seq.label,
                m: last.iter().map(|v| v.as_f64()).collect(),
            })
        })
        .collect()
}

/// `record_id,label,pc1,pc2,sparsity` rows.
pub fn embeddings_csv(samples: &[EmbeddingSample], pca: &Pca) -> String {
    let mut out = String::from("record_id,label,pc1,pc2,sparsity\n");
    for (s, p) in samples.iter().zip(&pca.points) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.record_id,
            s.label,
            p[0],
            p[1],
            sparsity(&s.m, DEFAULT_SPARSITY_EPS)
        );
    }
    out
}

/// Write each named matrix to `dir/{tag}_{name}_step{step}.json`, where
/// `step` counts the memory steps taken so far. All names are checked
/// before anything is written.
pub fn snapshot_matrices<T: Scalar>(model: &Classifier<T>, names: &[&str], tag: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let matrices = names
        .iter()
        .map(|&n| model.named_matrix(n).map(|m| m.to_named(n)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let step = model.state().steps;
    matrices
        .iter()
        .map(|m| {
            let path = dir.join(format!("{tag}_{}_step{step}.json", m.name));
            m.write_json(&path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub l: usize,
    pub k: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub kind: MemoryKind,
    /// Supplies `input_dim`, `eta`, class count and seed.
    pub base: ModelConfig,
    pub points: Vec<(usize, usize)>,
    pub n_predictions: usize,
    pub seq_len: usize,
}

/// Points varying `l` at `base_k`, then `k` at `base_l`.
pub fn bench_points(ls: &[usize], base_k: usize, ks: &[usize], base_l: usize) -> Vec<(usize, usize)> {
    ls.iter()
        .map(|&l| (l, base_k))
        .chain(ks.iter().map(|&k| (base_l, k)))
        .collect()
}

/// Time `n_predictions` single-sequence forward passes per `(l, k)` point
/// on the calling thread, after one untimed warm-up pass. Model
/// construction and input generation are outside the timed region.
pub fn bench_runtime(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.seq_len == 0 {
        return Err(Error::invalid("seq_len must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base.seed);
    let seq: Vec<Vec<f64>> = (0..cfg.seq_len)
        .map(|_| (0..cfg.base.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    cfg.points
        .iter()
        .map(|&(l, k)| {
            let mut model = Classifier::<f64>::new(ModelConfig {
                memory_len: l,
                embed_dim: k,
                memory_kind: cfg.kind,
                trace_lifetime: TraceLifetime::PerSequence,
                ..cfg.base.clone()
            })?;
            model.probabilities(&seq)?;
            let start = Instant::now();
            for _ in 0..cfg.n_predictions {
                std::hint::black_box(model.probabilities(std::hint::black_box(&seq))?);
            }
            Ok(BenchRow {
                l,
                k,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("l,k,wall_seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.l, r.k, r.wall_seconds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&[0.0f64; 4], 0.05), 1.0);
        assert_eq!(sparsity(&[1.0f64; 4], 0.05), 0.0);
        assert_eq!(sparsity(&[0.01f64, 0.5, -0.02, 0.9], 0.05), 0.5);
    }

    #[test]
    fn pca_line_has_no_second_component() {
        let dir = [1.0, -2.0, 0.5];
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| dir.iter().map(|d| d * i as f64 + 3.0).collect())
            .collect();
        let p = pca_2d(&pts).unwrap();
        assert!(p.points.iter().all(|q| q[1].abs() < 1e-10));
        assert!(p.explained[1].abs() < 1e-10);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn pca_identical_points_are_zero() {
        let p = pca_2d(&vec![vec![2.0f64, 1.0]; 5]).unwrap();
        assert!(p.points.iter().all(|q| q == &[0.0, 0.0]));
        assert_eq!(p.explained, [0.0, 0.0]);
        assert!(pca_2d(&vec![vec![1.0f64]; 2]).is_err());
    }

    #[test]
    fn pca_one_dimensional_input() {
        let p = pca_2d(&[vec![1.0f64], vec![2.0], vec![4.0]]).unwrap();
        assert!(p.points.iter().all(|q| q[1] == 0.0));
        assert!((p.explained[0] - p.total_variance).abs() < 1e-12);
    }

    #[test]
    fn snapshot_rejects_unknown_name() {
        let m = Classifier::<f64>::new(ModelConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = snapshot_matrices(&m, &["out_hebb", "nope"], "t", dir.path()).unwrap_err();
        assert!(err.to_string().contains("out_hebb"), "{err}");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn zero_predictions_time_nothing() {
        let rows = bench_runtime(&BenchConfig {
            kind: MemoryKind::Plastic,
            base: ModelConfig::default(),
            points: vec![(2, 4)],
            n_predictions: 0,
            seq_len: 3,
        })
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].wall_seconds < 0.1);
    }
}
