use super::EnsembleMode;
use crate::mixer::MultiScaleSeries;
use crate::nn::{InitScheme, Linear, ParamStore};
use crate::tensor::{softmax, Tensor};
use crate::{Error, Result};

/// Output map for one scale: temporal linear `L_m → out_len` followed by a
/// feature linear `d → out_ch`. Classification heads mean-pool over time
/// instead of the temporal map.
#[derive(Clone, Debug)]
pub struct TaskHead {
    pub temporal: Option<Linear>,
    pub feature: Linear,
}

impl TaskHead {
    pub fn sequence(
        store: &mut ParamStore,
        name: &str,
        in_len: usize,
        out_len: usize,
        d_model: usize,
        out_ch: usize,
    ) -> Result<Self> {
        Ok(TaskHead {
            temporal: Some(Linear::new(
                store,
                &format!("{name}.temporal"),
                in_len,
                out_len,
            )?),
            feature: Linear::new(store, &format!("{name}.feature"), d_model, out_ch)?,
        })
    }

    pub fn pooled(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_classes: usize,
    ) -> Result<Self> {
        Ok(TaskHead {
            temporal: None,
            feature: Linear::new(store, &format!("{name}.feature"), d_model, n_classes)?,
        })
    }

    /// `[B, L_m, d]` → `[B, out_len, out_ch]`, or `[B, n_classes]` when pooled.
    pub fn forward(&self, rep: &Tensor) -> Result<Tensor> {
        if rep.rank() != 3 {
            return Err(Error::Invalid(format!(
                "head expects [B, L, d], got {:?}",
                rep.shape()
            )));
        }
        match &self.temporal {
            Some(temporal) => {
                let t = temporal.forward(&rep.permute(&[0, 2, 1])?)?;
                self.feature.forward(&t.permute(&[0, 2, 1])?)
            }
            None => self.feature.forward(&rep.mean_axis(1, false)?),
        }
    }
}

/// Combination rule across the per-scale head outputs.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub mode: EnsembleMode,
    /// `[M+1]`, zero-initialized; present only in learned mode.
    pub logits: Option<Tensor>,
}

impl Ensemble {
    pub fn new(store: &mut ParamStore, mode: EnsembleMode, members: usize) -> Result<Self> {
        let logits = match mode {
            EnsembleMode::Average => None,
            EnsembleMode::Learned => {
                Some(store.create("ensemble.logits", &[members], InitScheme::Zeros)?)
            }
        };
        Ok(Ensemble { mode, logits })
    }

    pub fn combine(&self, outputs: &[Tensor]) -> Result<Tensor> {
        if outputs.is_empty() {
            return Err(Error::Invalid("ensemble of zero heads".into()));
        }
        match (&self.mode, &self.logits) {
            (EnsembleMode::Average, _) => {
                let mut acc = outputs[0].clone();
                for o in &outputs[1..] {
                    acc = acc.add(o)?;
                }
                Ok(acc.scale(1.0 / outputs.len() as f64))
            }
            (EnsembleMode::Learned, Some(logits)) => {
                if logits.numel() != outputs.len() {
                    return Err(Error::Invalid(format!(
                        "{} ensemble logits for {} heads",
                        logits.numel(),
                        outputs.len()
                    )));
                }
                let w = softmax(logits, 0)?;
                let mut acc = outputs[0].mul(&w.slice_axis(0, 0, 1)?)?;
                for (m, o) in outputs.iter().enumerate().skip(1) {
                    acc = acc.add(&o.mul(&w.slice_axis(0, m, m + 1)?)?)?;
                }
                Ok(acc)
            }
            (EnsembleMode::Learned, None) => {
                Err(Error::Invalid("learned ensemble without logits".into()))
            }
        }
    }
}

/// Applies head `m` to scale `m` and combines the results.
pub fn ensemble_heads(
    reps: &MultiScaleSeries,
    heads: &[TaskHead],
    ensemble: &Ensemble,
) -> Result<Tensor> {
    if heads.len() != reps.levels.len() {
        return Err(Error::Invalid(format!(
            "{} heads for {} scales",
            heads.len(),
            reps.levels.len()
        )));
    }
    let outputs = heads
        .iter()
        .zip(&reps.levels)
        .map(|(h, r)| h.forward(r))
        .collect::<Result<Vec<_>>>()?;
    ensemble.combine(&outputs)
}
