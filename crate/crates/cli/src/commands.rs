use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pnmn_core::analysis::{
    bench_csv, bench_points, bench_runtime, embeddings_csv, extract_embeddings, pca_2d, snapshot_matrices, BenchConfig,
};
use pnmn_core::data::{load_csv, minmax_scale, sliding_window, synth_generate, write_dataset};
use pnmn_core::training::{hyper_sweep, sweep_csv, write_metrics_csv, SweepGrid};
use pnmn_core::{evaluate, Checkpoint, Classifier64, LabeledSequence, MemoryKind, ModelConfig, Oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DataSource;
use crate::{RunConfig, UsageError};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic_checkpoint.json";
pub const METRICS: &str = "metrics.csv";

/// Create the output directory and record the resolved config in it.
fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| UsageError(format!("cannot create {}: {e}", out.display())))?;
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Training (`test = false`) or test data, windowed and scaled as
/// configured.
pub fn load_data(cfg: &RunConfig, test: bool) -> anyhow::Result<Vec<LabeledSequence>> {
    let raw = match cfg.data_source {
        DataSource::Synthetic => synth_generate(&cfg.synth_config(test))?,
        DataSource::Manifest => {
            let (key, path) = if test {
                ("test_manifest", &cfg.test_manifest)
            } else {
                ("manifest", &cfg.manifest)
            };
            if path.is_empty() {
                bail!(UsageError(format!("config key `{key}` is required when data_source = manifest")));
            }
            load_csv(Path::new(path), cfg.csv_header)?
        }
    };
    preprocess(cfg, raw)
}

fn preprocess(cfg: &RunConfig, data: Vec<LabeledSequence>) -> anyhow::Result<Vec<LabeledSequence>> {
    if cfg.window_len == 0 && !cfg.minmax {
        return Ok(data);
    }
    let mut out = Vec::with_capacity(data.len());
    for seq in data {
        let windows = if cfg.window_len == 0 {
            vec![seq.steps]
        } else {
            sliding_window(&seq.steps, cfg.window_len, cfg.window_overlap)?
        };
        for w in windows {
            let steps = if cfg.minmax { minmax_scale(&w)? } else { w };
            out.push(LabeledSequence::new(steps, seq.label, seq.record_id.clone())?);
        }
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let data = load_data(cfg, false)?;
    let mut model = Classifier64::new(cfg.model_config())?;
    let tc = cfg.train_config();
    let report = match pnmn_core::train(&mut model, &data, &tc) {
        Ok(r) => r,
        Err(pnmn_core::Error::NonFiniteLoss { message, checkpoint }) => {
            let path = out.join(DIAGNOSTIC_CHECKPOINT);
            checkpoint.save(&path)?;
            bail!("non-finite loss at {message}; diagnostic checkpoint written to {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };
    model.to_checkpoint(true).save(&out.join(CHECKPOINT))?;
    write_metrics_csv(&out.join(METRICS), &report.history, tc.lr)?;
    let summary = serde_json::json!({
        "best_epoch": report.best_epoch,
        "best_val_acc": report.best_val_acc,
        "checkpoint": out.join(CHECKPOINT),
        "metrics": out.join(METRICS),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn eval(checkpoint: &Path, data: Option<&Path>, header: bool, vote: bool, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut model = Classifier64::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let data = match data {
        Some(manifest) => preprocess(cfg, load_csv(manifest, header)?)?,
        None => load_data(cfg, true)?,
    };
    let metrics = evaluate(&mut model, &data, vote)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let grid = SweepGrid {
        k: cfg.sweep_k.0.clone(),
        l: cfg.sweep_l.0.clone(),
        eta: cfg.sweep_eta.0.clone(),
    };
    if grid.is_empty() {
        bail!(UsageError("sweep needs at least one of sweep_k, sweep_l, sweep_eta".into()));
    }
    let out = prepare_out(cfg)?;
    let data = load_data(cfg, false)?;
    let rows = hyper_sweep(&cfg.model_config(), &grid, &data, &cfg.train_config())?;
    let csv = sweep_csv(&rows);
    write_text(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSpec {
    pub kind: MemoryKind,
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub steps: usize,
    pub seed: u64,
    pub h: f64,
    pub tol: f64,
}

pub fn gradcheck(spec: &GradcheckSpec, oracle: Oracle) -> anyhow::Result<()> {
    if spec.steps == 0 {
        bail!(UsageError("--steps must be at least 1".into()));
    }
    let model = Classifier64::new(ModelConfig {
        input_dim: spec.d,
        embed_dim: spec.k,
        memory_len: spec.l,
        memory_kind: spec.kind,
        seed: spec.seed,
        ..ModelConfig::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let seq: Vec<Vec<f64>> = (0..spec.steps)
        .map(|_| (0..spec.d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let label = rng.gen_range(0..model.config().num_classes);
    let report = model.gradcheck(&seq, label, spec.h, spec.tol, oracle)?;
    println!("{report}");
    if !report.passed {
        bail!("gradient check failed: max_rel_err={:.3e} >= {}", report.max_rel_err, spec.tol);
    }
    Ok(())
}

pub fn export(checkpoint: Option<&Path>, cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let ckpt_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(CHECKPOINT));
    let mut model = Classifier64::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
    let names: Vec<&str> = cfg.export_matrices.0.iter().map(String::as_str).collect();
    let test = load_data(cfg, true)?;
    let mut written = snapshot_matrices(&model, &names, "after-train", &out)?;
    // Embeddings come from the same state sequence the test pass sees.
    let embeddings = extract_embeddings(&mut model.clone(), &test)?;
    let metrics = evaluate(&mut model, &test, false)?;
    written.extend(snapshot_matrices(&model, &names, "after-test", &out)?);
    let m: Vec<Vec<f64>> = embeddings.iter().map(|e| e.m.clone()).collect();
    let emb_path = out.join("embeddings.csv");
    write_text(&emb_path, &embeddings_csv(&embeddings, &pca_2d(&m)?))?;
    written.push(emb_path);
    let metrics_path = out.join("test_metrics.json");
    write_text(&metrics_path, &serde_json::to_string_pretty(&metrics)?)?;
    written.push(metrics_path);
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let rows = bench_runtime(&BenchConfig {
        kind: cfg.memory_kind,
        base: cfg.model_config(),
        points: bench_points(&cfg.bench_l.0, cfg.bench_base_k, &cfg.bench_k.0, cfg.bench_base_l),
        n_predictions: cfg.bench_predictions,
        seq_len: cfg.bench_seq_len,
    })?;
    let csv = bench_csv(&rows);
    write_text(&out.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.data_source != DataSource::Synthetic {
        bail!(UsageError("gen-data only writes synthetic data (set data_source = synthetic)".into()));
    }
    let out = prepare_out(cfg)?;
    for (name, test) in [("train", false), ("test", true)] {
        let data = synth_generate(&cfg.synth_config(test))?;
        println!("{}", write_dataset(&out.join(name), &data)?.display());
    }
    Ok(())
}
