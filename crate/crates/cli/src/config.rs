//! `key = value` run configuration with dotted sections.
//!
//! ```text
//! task = forecast
//! model.seq_len = 96
//! model.horizon = 24
//! synth.kind = multi_sine
//! synth.periods = 24, 8
//! train.epochs = 20
//! ```
//!
//! `[section]` headers prefix the keys that follow them. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tspm_core::data::SynthSpec;
use tspm_core::model::{EnsembleMode, ModelConfig, TaskKind};
use tspm_core::tasks::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic {
        spec: SynthSpec,
        rows: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub source: DataSource,
    /// Column holding class labels or anomaly flags, if present.
    pub label_column: String,
    pub split: (f64, f64, f64),
    pub stride: usize,
    pub eval_stride: usize,
    pub anomaly_q: f64,
    /// Spikes injected into the test split of synthetic anomaly runs.
    pub inject_rate: f64,
    pub inject_magnitude: f64,
    /// Directory of the config file; outputs are written here.
    pub base_dir: PathBuf,
    pub stem: String,
}

const KEYS: &[&str] = &[
    "task",
    "data.source",
    "data.csv",
    "data.rows",
    "data.channels",
    "data.label_column",
    "data.split",
    "data.stride",
    "data.eval_stride",
    "synth.kind",
    "synth.periods",
    "synth.amplitudes",
    "synth.trend",
    "synth.noise",
    "synth.class_periods",
    "synth.segment_len",
    "synth.rate",
    "synth.magnitude",
    "model.seq_len",
    "model.horizon",
    "model.n_classes",
    "model.scales",
    "model.top_k",
    "model.layers",
    "model.d_model",
    "model.heads",
    "model.qkv_kernel",
    "model.ensemble",
    "model.revin",
    "model.channel_mix_residual",
    "model.positional",
    "train.lr",
    "train.warmup_steps",
    "train.lr_decay",
    "train.epochs",
    "train.batch_size",
    "train.patience",
    "train.seed",
    "train.mask_ratio",
    "anomaly.q",
    "anomaly.inject_rate",
    "anomaly.inject_magnitude",
];

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Raw key/value table.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            invalid(
                &format!("line {}", i + 1),
                format!("expected key = value, got {line:?}"),
            )
        })?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        if !KEYS.contains(&key.as_str()) {
            return Err(invalid(&key, "unknown key"));
        }
        let v = v.trim().trim_matches('"').to_string();
        if out.insert(key.clone(), v).is_some() {
            return Err(invalid(&key, "given twice"));
        }
    }
    Ok(out)
}

struct Table(BTreeMap<String, String>);

impl Table {
    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| invalid(key, format!("cannot parse {v:?}"))),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.0.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| invalid(key, format!("cannot parse {s:?}")))
                })
                .collect(),
        }
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path
            .file_stem()
            .map_or("run".into(), |s| s.to_string_lossy().into_owned());
        let seed_override = std::env::var("TSPM_SEED").ok();
        Self::parse(&text, base_dir, stem, seed_override.as_deref())
    }

    pub fn parse(
        text: &str,
        base_dir: PathBuf,
        stem: String,
        seed_override: Option<&str>,
    ) -> Result<Self, CliError> {
        let t = Table(parse_pairs(text)?);
        let default_len = if t.str("task") == Some("anomaly") {
            100
        } else {
            96
        };
        let seq_len = t.get("model.seq_len", default_len)?;
        let task = match t.str("task").unwrap_or("forecast") {
            "forecast" => TaskKind::Forecast {
                horizon: t.get("model.horizon", 24usize)?,
            },
            "imputation" => TaskKind::Imputation,
            "anomaly" => TaskKind::AnomalyDetection,
            "classification" => TaskKind::Classification {
                n_classes: t.get("model.n_classes", 3usize)?,
            },
            other => return Err(invalid("task", format!("unknown task {other:?}"))),
        };
        let channels = t.get("data.channels", 2usize)?;
        let source = match t.str("data.source").unwrap_or("synthetic") {
            "csv" => {
                let p = t
                    .str("data.csv")
                    .ok_or_else(|| invalid("data.csv", "required when data.source = csv"))?;
                let p = PathBuf::from(p);
                DataSource::Csv(if p.is_relative() { base_dir.join(p) } else { p })
            }
            "synthetic" => DataSource::Synthetic {
                spec: synth_spec(&t, seq_len)?,
                rows: t.get("data.rows", 1200usize)?,
                channels,
            },
            other => return Err(invalid("data.source", format!("unknown source {other:?}"))),
        };
        let defaults = ModelConfig::new(seq_len, channels, task);
        let model = ModelConfig {
            scales: t.get("model.scales", defaults.scales)?,
            top_k: t.get("model.top_k", defaults.top_k)?,
            layers: t.get("model.layers", defaults.layers)?,
            d_model: t.get("model.d_model", defaults.d_model)?,
            heads: t.get("model.heads", defaults.heads)?,
            qkv_kernel: t.get("model.qkv_kernel", defaults.qkv_kernel)?,
            ensemble: match t.str("model.ensemble") {
                None => defaults.ensemble,
                Some(s) => s
                    .parse::<EnsembleMode>()
                    .map_err(|e| invalid("model.ensemble", e.to_string()))?,
            },
            revin: t.get("model.revin", defaults.revin)?,
            channel_mix_residual: t
                .get("model.channel_mix_residual", defaults.channel_mix_residual)?,
            positional: t.get("model.positional", defaults.positional)?,
            ..defaults
        };
        let td = TrainConfig::default();
        let mut seed = t.get("train.seed", td.seed)?;
        if let Some(s) = seed_override {
            seed = s
                .trim()
                .parse()
                .map_err(|_| invalid("TSPM_SEED", format!("cannot parse {s:?}")))?;
        }
        let train = TrainConfig {
            lr: t.get("train.lr", td.lr)?,
            warmup_steps: t.get("train.warmup_steps", td.warmup_steps)?,
            lr_decay: t.get("train.lr_decay", td.lr_decay)?,
            epochs: t.get("train.epochs", td.epochs)?,
            batch_size: t.get("train.batch_size", td.batch_size)?,
            patience: t.get("train.patience", td.patience)?,
            seed,
            mask_ratio: t.get("train.mask_ratio", td.mask_ratio)?,
        };
        let split = t.list("data.split", &[0.7, 0.1, 0.2])?;
        let [a, b, c] = split[..] else {
            return Err(invalid("data.split", "needs three ratios"));
        };
        let cfg = RunConfig {
            model,
            train,
            source,
            label_column: t.str("data.label_column").unwrap_or("label").to_string(),
            split: (a, b, c),
            stride: t.get("data.stride", 1usize)?,
            eval_stride: t.get("data.eval_stride", 1usize)?,
            anomaly_q: t.get("anomaly.q", 0.99)?,
            inject_rate: t.get("anomaly.inject_rate", 0.01)?,
            inject_magnitude: t.get("anomaly.inject_magnitude", 10.0)?,
            base_dir,
            stem,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(field_error)?;
        self.train.validate().map_err(field_error)?;
        if self.model.layers == 0 {
            return Err(invalid("model.layers", "must be at least 1"));
        }
        if self.stride == 0 || self.eval_stride == 0 {
            return Err(invalid("data.stride", "must be at least 1"));
        }
        if !(self.anomaly_q > 0.0 && self.anomaly_q < 1.0) {
            return Err(invalid(
                "anomaly.q",
                format!("{} outside (0, 1)", self.anomaly_q),
            ));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.base_dir.join(format!("{}.ckpt", self.stem))
    }

    pub fn report_path(&self) -> PathBuf {
        self.base_dir.join(format!("{}.report.json", self.stem))
    }
}

fn field_error(e: tspm_core::Error) -> CliError {
    match e {
        tspm_core::Error::InvalidConfig { field, reason } => invalid(field, reason),
        other => CliError::Core(other),
    }
}

fn synth_spec(t: &Table, seq_len: usize) -> Result<SynthSpec, CliError> {
    let periods = t.list("synth.periods", &[24.0, 8.0])?;
    let amplitudes = t.list("synth.amplitudes", &vec![1.0; periods.len()])?;
    let trend = t.get("synth.trend", 0.0)?;
    let noise = t.get("synth.noise", 0.1)?;
    match t.str("synth.kind").unwrap_or("multi_sine") {
        "multi_sine" => Ok(SynthSpec::MultiSine {
            periods,
            amplitudes,
            trend,
            noise,
        }),
        "spiky" => Ok(SynthSpec::Spiky {
            periods,
            amplitudes,
            trend,
            noise,
            rate: t.get("synth.rate", 0.01)?,
            magnitude: t.get("synth.magnitude", 10.0)?,
        }),
        "class_mixture" => {
            let raw = t.str("synth.class_periods").unwrap_or("24 | 8 | 24, 6");
            let class_periods = raw
                .split('|')
                .map(|group| {
                    group
                        .split(',')
                        .map(|s| {
                            s.trim().parse().map_err(|_| {
                                invalid("synth.class_periods", format!("cannot parse {s:?}"))
                            })
                        })
                        .collect::<Result<Vec<f64>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SynthSpec::ClassMixture {
                class_periods,
                segment_len: t.get("synth.segment_len", seq_len)?,
                noise,
            })
        }
        other => Err(CliError::Core(
            tspm_core::data::DataError::UnknownSpec(other.to_string()).into(),
        )),
    }
}
