//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown keys are rejected. [`RunConfig::to_text`] writes the
//! fully resolved document, which parses back to the same config.

use std::fmt::{self, Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pnmn_core::data::{AnomalyKind, SynthConfig};
use pnmn_core::model::MemoryInitPolicy;
use pnmn_core::{MemoryKind, ModelConfig, TraceLifetime, TrainConfig};

use crate::UsageError;

pub const OUT_DIR_ENV: &str = "PNMN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Manifest,
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "manifest" => Ok(Self::Manifest),
            _ => Err(format!("unknown data source {s:?} (synthetic|manifest)")),
        }
    }
}

impl Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Synthetic => "synthetic",
            Self::Manifest => "manifest",
        })
    }
}

/// Comma-separated list; empty means no entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Self(Vec::new()));
        }
        s.split(',')
            .map(|item| item.trim().parse::<T>().map_err(|e| format!("{item:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(Self)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, UsageError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| UsageError(format!("config key `{key}`: invalid value {value:?}: {e}")))
}

macro_rules! run_config {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty = $default:expr,)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, value)?,)*
                    _ => return Err(UsageError(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(let _ = writeln!(out, "{} = {}", stringify!($field), self.$field);)*
                out
            }
        }
    };
}

run_config! {
    input_dim: usize = 1,
    embed_dim: usize = 16,
    memory_len: usize = 8,
    eta: f64 = 0.5,
    num_classes: usize = 2,
    memory_kind: MemoryKind = MemoryKind::Plastic,
    trace_lifetime: TraceLifetime = TraceLifetime::PerSequence,
    memory_init: MemoryInitPolicy = MemoryInitPolicy::Uniform,
    /// Seeds model initialisation and the training shuffle/split.
    seed: u64 = 0,

    epochs: usize = 50,
    lr: f64 = 1e-3,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    batch_size: usize = 1,
    val_fraction: f64 = 0.2,
    shuffle: bool = true,

    data_source: DataSource = DataSource::Synthetic,
    manifest: String = String::new(),
    test_manifest: String = String::new(),
    csv_header: bool = false,
    synth_records: usize = 200,
    synth_steps: usize = 100,
    synth_channels: usize = 1,
    synth_anomaly: AnomalyKind = AnomalyKind::LongRange,
    synth_noise_sd: f64 = 0.1,
    synth_windows: usize = 1,
    data_seed: u64 = 0,
    test_seed: u64 = 1000,
    /// 0 keeps whole sequences.
    window_len: usize = 0,
    window_overlap: f64 = 0.5,
    minmax: bool = false,

    out_dir: String = "runs/default".to_string(),

    sweep_k: List<usize> = List::default(),
    sweep_l: List<usize> = List::default(),
    sweep_eta: List<f64> = List::default(),

    bench_l: List<usize> = List(vec![10, 20, 40]),
    bench_k: List<usize> = List(vec![40, 80, 160]),
    bench_base_k: usize = 16,
    bench_base_l: usize = 20,
    bench_predictions: usize = 1000,
    bench_seq_len: usize = 100,

    export_matrices: List<String> = List(vec!["out_w".into(), "out_hebb".into(), "memory".into()]),
}

impl RunConfig {
    /// Apply a `key = value` document on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), UsageError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(UsageError(format!("{origin}:{}: expected `key = value`, got {line:?}", n + 1)));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), UsageError> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("override {kv:?} is not of the form key=value")))?;
        self.set(key.trim(), value.trim())
    }

    /// Defaults, then the config file, then the output-dir environment
    /// variable, then `--set` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = dir;
            }
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.input_dim,
            embed_dim: self.embed_dim,
            memory_len: self.memory_len,
            eta: self.eta,
            num_classes: self.num_classes,
            memory_kind: self.memory_kind,
            trace_lifetime: self.trace_lifetime,
            memory_init: self.memory_init,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            batch_size: self.batch_size,
            val_fraction: self.val_fraction,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn synth_config(&self, test: bool) -> SynthConfig {
        SynthConfig {
            n_records: self.synth_records,
            steps: self.synth_steps,
            channels: self.synth_channels,
            anomaly_kind: self.synth_anomaly,
            noise_sd: self.synth_noise_sd,
            seed: if test { self.test_seed } else { self.data_seed },
            windows_per_record: self.synth_windows,
        }
    }
}
