use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    Forecast { horizon: usize },
    Imputation,
    AnomalyDetection,
    Classification { n_classes: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Forecast { .. } => "forecast",
            TaskKind::Imputation => "imputation",
            TaskKind::AnomalyDetection => "anomaly",
            TaskKind::Classification { .. } => "classification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Average,
    Learned,
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(EnsembleMode::Average),
            "learned" => Ok(EnsembleMode::Learned),
            other => Err(Error::InvalidConfig {
                field: "ensemble",
                reason: format!("unknown mode {other:?} (expected average or learned)"),
            }),
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnsembleMode::Average => "average",
            EnsembleMode::Learned => "learned",
        })
    }
}

/// Architecture and task shape. `layers = 0` is accepted here (the model
/// then returns its embeddings); training configs require at least one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub channels: usize,
    pub scales: usize,
    pub top_k: usize,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub qkv_kernel: usize,
    pub task: TaskKind,
    pub ensemble: EnsembleMode,
    pub channel_mix_residual: bool,
    pub positional: bool,
    pub revin: bool,
}

impl ModelConfig {
    /// Defaults for everything but the data shape and task.
    pub fn new(seq_len: usize, channels: usize, task: TaskKind) -> Self {
        ModelConfig {
            seq_len,
            channels,
            scales: 2,
            top_k: 2,
            layers: 1,
            d_model: 16,
            heads: 4,
            qkv_kernel: 3,
            task,
            ensemble: EnsembleMode::Average,
            channel_mix_residual: true,
            positional: true,
            revin: matches!(task, TaskKind::Forecast { .. } | TaskKind::Imputation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.channels == 0 {
            return bad("channels", "must be at least 1".into());
        }
        if self.scales >= usize::BITS as usize - 3 {
            return bad("scales", format!("{} is too large", self.scales));
        }
        let min_len = 4usize << self.scales;
        if self.seq_len < min_len {
            return bad(
                "seq_len",
                format!(
                    "{} < 4·2^M = {min_len} for M = {}",
                    self.seq_len, self.scales
                ),
            );
        }
        if self.top_k == 0 {
            return bad("top_k", "must be at least 1".into());
        }
        if self.d_model == 0 {
            return bad("d_model", "must be at least 1".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(
                "heads",
                format!(
                    "d_model {} not divisible by {} heads",
                    self.d_model, self.heads
                ),
            );
        }
        if self.qkv_kernel == 0 || self.qkv_kernel.is_multiple_of(2) {
            return bad("qkv_kernel", format!("{} must be odd", self.qkv_kernel));
        }
        match self.task {
            TaskKind::Forecast { horizon: 0 } => bad("horizon", "must be at least 1".into()),
            TaskKind::Classification { n_classes } if n_classes < 2 => {
                bad("n_classes", format!("{n_classes} < 2"))
            }
            _ => Ok(()),
        }
    }

    /// `⌊T/2^m⌋` for `m = 0..=M`.
    pub fn scale_lengths(&self) -> Vec<usize> {
        (0..=self.scales).map(|m| self.seq_len >> m).collect()
    }

    /// Per-sample output shape of the ensemble.
    pub fn output_shape(&self) -> Vec<usize> {
        match self.task {
            TaskKind::Forecast { horizon } => vec![horizon, self.channels],
            TaskKind::Imputation | TaskKind::AnomalyDetection => vec![self.seq_len, self.channels],
            TaskKind::Classification { n_classes } => vec![n_classes],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = ModelConfig::new(96, 2, TaskKind::Forecast { horizon: 24 });
        ok.validate().unwrap();
        assert_eq!(ok.scale_lengths(), vec![96, 48, 24]);
        let short = ModelConfig {
            scales: 5,
            ..ok.clone()
        };
        assert!(matches!(
            short.validate(),
            Err(Error::InvalidConfig {
                field: "seq_len",
                ..
            })
        ));
        let heads = ModelConfig {
            heads: 3,
            ..ok.clone()
        };
        assert!(heads.validate().is_err());
        let k0 = ModelConfig { top_k: 0, ..ok };
        assert!(k0.validate().is_err());
    }

    #[test]
    fn ensemble_mode_parsing() {
        assert_eq!(
            "learned".parse::<EnsembleMode>().unwrap(),
            EnsembleMode::Learned
        );
        assert!("median".parse::<EnsembleMode>().is_err());
    }
}
