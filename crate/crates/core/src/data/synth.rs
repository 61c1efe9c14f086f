use std::f64::consts::TAU;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledSequence;
use crate::error::{Error, Result};

const FREQ_A: f64 = 1.0 / 20.0;
const FREQ_B: f64 = 1.0 / 7.0;
const AMP_A: f64 = 0.5;
const AMP_B: f64 = 0.3;
const MARKER_AMP: f64 = 2.0;
const MARKER_WIDTH: usize = 3;
const BURST_AMP: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// A short Gaussian bump on one channel.
    Burst,
    /// The slow component doubles its frequency halfway through.
    FreqShift,
    /// An early marker whose sign disagrees with the late reference marker.
    LongRange,
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "burst" => Ok(Self::Burst),
            "freq_shift" => Ok(Self::FreqShift),
            "long_range" => Ok(Self::LongRange),
            _ => Err(Error::invalid(format!(
                "unknown anomaly kind {s:?} (expected burst, freq_shift or long_range)"
            ))),
        }
    }
}

impl std::fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Burst => "burst",
            Self::FreqShift => "freq_shift",
            Self::LongRange => "long_range",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_records: usize,
    pub steps: usize,
    pub channels: usize,
    pub anomaly_kind: AnomalyKind,
    pub noise_sd: f64,
    pub seed: u64,
    pub windows_per_record: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_records: 200,
            steps: 100,
            channels: 1,
            anomaly_kind: AnomalyKind::LongRange,
            noise_sd: 0.1,
            seed: 0,
            windows_per_record: 1,
        }
    }
}

/// Start steps of the early and late markers of the long-range task.
pub fn marker_positions(steps: usize) -> (usize, usize) {
    let early = steps / 10;
    (early, steps - early - MARKER_WIDTH)
}

/// Long-range label read back from the markers on channel 0: 1 when their
/// signs disagree. Exact on noise-free data.
pub fn long_range_label(steps: &[Vec<f64>]) -> usize {
    let (early, late) = marker_positions(steps.len());
    let mid = MARKER_WIDTH / 2;
    let a = steps[early + mid][0];
    let b = steps[late + mid][0];
    usize::from((a > 0.0) != (b > 0.0))
}

/// Generate a balanced two-class dataset. Record `i` has label `i % 2`
/// and contributes `windows_per_record` windows sharing its id.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<LabeledSequence>> {
    if cfg.n_records == 0 || cfg.channels == 0 || cfg.windows_per_record == 0 {
        return Err(Error::invalid("n_records, channels and windows_per_record must be positive"));
    }
    let min_steps = 2 * MARKER_WIDTH + 4;
    if cfg.steps < min_steps {
        return Err(Error::invalid(format!("synthetic sequences need at least {min_steps} steps")));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::invalid(format!("noise_sd must be finite and non-negative, got {}", cfg.noise_sd)));
    }
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_records * cfg.windows_per_record);
    for r in 0..cfg.n_records {
        let label = r % 2;
        let id = format!("rec{r:05}");
        for _ in 0..cfg.windows_per_record {
            let steps = window(cfg, label, &noise, &mut rng);
            out.push(LabeledSequence {
                steps,
                label,
                record_id: id.clone(),
            });
        }
    }
    Ok(out)
}

fn window(cfg: &SynthConfig, label: usize, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = cfg.steps;
    let phases: Vec<(f64, f64)> = (0..cfg.channels)
        .map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)))
        .collect();
    let abnormal = label == 1;
    let half = n / 2;
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            phases
                .iter()
                .map(|&(pa, pb)| {
                    let fa = if abnormal && cfg.anomaly_kind == AnomalyKind::FreqShift && t >= half {
                        2.0 * FREQ_A
                    } else {
                        FREQ_A
                    };
                    AMP_A * (TAU * fa * t as f64 + pa).sin() + AMP_B * (TAU * FREQ_B * t as f64 + pb).sin()
                })
                .collect()
        })
        .collect();
    match cfg.anomaly_kind {
        AnomalyKind::Burst if abnormal => {
            let centre = rng.gen_range(n / 4..=3 * n / 4) as f64;
            let channel = rng.gen_range(0..cfg.channels);
            for (t, row) in x.iter_mut().enumerate() {
                let u = (t as f64 - centre) / 2.0;
                row[channel] += BURST_AMP * (-u * u).exp();
            }
        }
        AnomalyKind::LongRange => {
            // The late marker is a fixed positive reference; an abnormal
            // record flips the early one.
            let second = MARKER_AMP;
            let first = if abnormal { -second } else { second };
            let (early, late) = marker_positions(n);
            for i in 0..MARKER_WIDTH {
                x[early + i][0] += first;
                x[late + i][0] += second;
            }
        }
        _ => {}
    }
    if cfg.noise_sd > 0.0 {
        for v in x.iter_mut().flatten() {
            *v += noise.sample(rng);
        }
    }
    x
}
