//! Dataset construction: windowing, scaling, feature-map flattening,
//! record-level voting, synthetic tasks and CSV ingestion.

mod io;
mod synth;

pub use io::{load_csv, write_dataset, ManifestEntry};
pub use synth::{long_range_label, marker_positions, synth_generate, AnomalyKind, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One labelled input sequence. Windows cut from the same source share a
/// `record_id`, which drives voting and record-level splits.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence<T = f64> {
    pub steps: Vec<Vec<T>>,
    pub label: usize,
    pub record_id: String,
}

impl<T: Scalar> LabeledSequence<T> {
    pub fn new(steps: Vec<Vec<T>>, label: usize, record_id: impl Into<String>) -> Result<Self> {
        let seq = Self {
            steps,
            label,
            record_id: record_id.into(),
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.steps.is_empty() || d == 0 {
            return Err(Error::invalid(format!("record {:?}: empty sequence", self.record_id)));
        }
        for (t, x) in self.steps.iter().enumerate() {
            if x.len() != d {
                return Err(Error::invalid(format!(
                    "record {:?}: step {t} has dim {}, expected {d}",
                    self.record_id,
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {:?}: non-finite value at step {t}", self.record_id)));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> LabeledSequence<U> {
        LabeledSequence {
            steps: self
                .steps
                .iter()
                .map(|x| x.iter().map(|v| U::of(v.as_f64())).collect())
                .collect(),
            label: self.label,
            record_id: self.record_id.clone(),
        }
    }
}

/// Check that every sequence is valid, has dim `input_dim` and a label
/// below `num_classes`.
pub fn validate_dataset<T: Scalar>(data: &[LabeledSequence<T>], input_dim: usize, num_classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    for seq in data {
        seq.validate()?;
        if seq.dim() != input_dim {
            return Err(Error::invalid(format!(
                "record {:?}: expected input dim {input_dim}, found {}",
                seq.record_id,
                seq.dim()
            )));
        }
        if seq.label >= num_classes {
            return Err(Error::invalid(format!(
                "record {:?}: label {} out of range for {num_classes} classes",
                seq.record_id, seq.label
            )));
        }
    }
    Ok(())
}

/// Record ids in order of first appearance, each with the indices of its
/// windows.
pub fn group_by_record<T>(data: &[LabeledSequence<T>]) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, seq) in data.iter().enumerate() {
        let slot = *index.entry(seq.record_id.clone()).or_insert_with(|| {
            groups.push((seq.record_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(i);
    }
    groups
}

/// Stride used by [`sliding_window`]: `round(window_len * (1 - overlap))`,
/// at least 1.
pub fn window_stride(window_len: usize, overlap: f64) -> usize {
    ((window_len as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Cut a `T x d` series into windows of `window_len` steps. Trailing
/// samples that cannot fill a window are dropped.
pub fn sliding_window<T: Clone>(signal: &[Vec<T>], window_len: usize, overlap: f64) -> Result<Vec<Vec<Vec<T>>>> {
    if window_len == 0 {
        return Err(Error::invalid("window_len must be at least 1"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap must lie in [0, 1), got {overlap}")));
    }
    if window_len > signal.len() {
        log::warn!(
            "window length {window_len} exceeds series length {}; no windows produced",
            signal.len()
        );
        return Ok(Vec::new());
    }
    let stride = window_stride(window_len, overlap);
    Ok((0..=signal.len() - window_len)
        .step_by(stride)
        .map(|s| signal[s..s + window_len].to_vec())
        .collect())
}

/// Per-channel min-max scaling into `[0, 1]`; constant channels map to 0.
pub fn minmax_scale<T: Scalar>(window: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let Some(first) = window.first() else {
        return Ok(Vec::new());
    };
    let d = first.len();
    let mut lo = vec![T::infinity(); d];
    let mut hi = vec![T::neg_infinity(); d];
    for (t, x) in window.iter().enumerate() {
        if x.len() != d {
            return Err(Error::invalid(format!("step {t} has dim {}, expected {d}", x.len())));
        }
        for (c, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!("non-finite value at step {t}, channel {c}")));
            }
            lo[c] = lo[c].smaller(v);
            hi[c] = hi[c].larger(v);
        }
    }
    Ok(window
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let span = hi[c] - lo[c];
                    if span > T::zero() {
                        (v - lo[c]) / span
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect())
}

/// Spatial feature map stored row-major as `H x W x C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock<T = f64> {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureBlock<T> {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<T>) -> Result<Self> {
        let block = Self { h, w, c, data };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.c == 0 {
            return Err(Error::invalid("feature block dimensions must be positive"));
        }
        if self.data.len() != self.h * self.w * self.c {
            return Err(Error::invalid(format!(
                "feature block {}x{}x{} needs {} values, found {}",
                self.h,
                self.w,
                self.c,
                self.h * self.w * self.c,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature block contains non-finite values"));
        }
        Ok(())
    }
}

/// Read the feature map row-wise, top left to bottom right: one step per
/// spatial site, each holding that site's channel vector.
pub fn flatten_feature_map<T: Scalar>(block: &FeatureBlock<T>) -> Vec<Vec<T>> {
    block.data.chunks(block.c).map(<[T]>::to_vec).collect()
}

/// Inverse of [`flatten_feature_map`].
pub fn unflatten_feature_map<T: Scalar>(steps: &[Vec<T>], h: usize, w: usize) -> Result<FeatureBlock<T>> {
    if steps.len() != h * w {
        return Err(Error::invalid(format!(
            "{} steps cannot fill a {h}x{w} map",
            steps.len()
        )));
    }
    let c = steps.first().map_or(0, Vec::len);
    if steps.iter().any(|s| s.len() != c) {
        return Err(Error::invalid("ragged channel vectors"));
    }
    FeatureBlock::new(h, w, c, steps.concat())
}

/// Modal class over window predictions. Ties go to the class with the
/// higher mean probability, then to the lower index.
pub fn majority_vote<T: Scalar>(predictions: &[usize], probs: &[Vec<T>]) -> Result<usize> {
    if predictions.is_empty() {
        return Err(Error::invalid("cannot vote over zero windows"));
    }
    if probs.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} probability vectors",
            predictions.len(),
            probs.len()
        )));
    }
    let classes = probs[0].len();
    if probs.iter().any(|p| p.len() != classes) {
        return Err(Error::invalid("inconsistent class count across windows"));
    }
    if let Some(&bad) = predictions.iter().find(|&&p| p >= classes) {
        return Err(Error::invalid(format!("prediction {bad} out of range for {classes} classes")));
    }
    let mut counts = vec![0usize; classes];
    for &p in predictions {
        counts[p] += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    // Summing sorted values keeps the tie-break independent of window order.
    let mass = |c: usize| {
        let mut col: Vec<f64> = probs.iter().map(|p| p[c].as_f64()).collect();
        col.sort_by(f64::total_cmp);
        col.iter().sum::<f64>()
    };
    let mut best: Option<(usize, f64)> = None;
    for c in (0..classes).filter(|&c| counts[c] == top) {
        let m = mass(c);
        if best.map_or(true, |(_, bm)| m > bm) {
            best = Some((c, m));
        }
    }
    Ok(best.expect("at least one modal class").0)
}
