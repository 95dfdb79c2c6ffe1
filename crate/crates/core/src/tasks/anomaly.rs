use serde::{Deserialize, Serialize};

use crate::data::SeriesFrame;
use crate::model::{MultiScaleMixer, TaskKind};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Flags time steps whose reconstruction score exceeds `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCriterion {
    pub threshold: f64,
    pub q: f64,
}

/// Per-time-step channel-mean squared reconstruction error, averaged over
/// every window (starts `0, stride, …` plus one flush with the end) covering it.
pub fn anomaly_scores(
    model: &MultiScaleMixer,
    frame: &SeriesFrame,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if model.config.task != TaskKind::AnomalyDetection {
        return Err(Error::Invalid(
            "anomaly scores need an anomaly-detection model".into(),
        ));
    }
    let (n, c, t) = (frame.rows(), frame.channels(), model.config.seq_len);
    if n < t {
        return Err(Error::Invalid(format!(
            "series of {n} rows is shorter than the window {t}"
        )));
    }
    let mut starts: Vec<usize> = (0..=n - t).step_by(stride.max(1)).collect();
    if *starts.last().expect("at least one window") != n - t {
        starts.push(n - t);
    }
    let values = frame.values();
    let (mut sum, mut count) = (vec![0.0; n], vec![0usize; n]);
    for chunk in starts.chunks(batch_size.max(1)) {
        let data = chunk
            .iter()
            .flat_map(|&s| values[s * c..(s + t) * c].iter().copied())
            .collect();
        let x = Tensor::constant(&[chunk.len(), t, c], data)?;
        let recon = model.predict(&x, None)?.to_vec();
        for (b, &s) in chunk.iter().enumerate() {
            for step in 0..t {
                let base = (b * t + step) * c;
                let err: f64 = (0..c)
                    .map(|ch| {
                        let d = recon[base + ch] - values[(s + step) * c + ch];
                        d * d
                    })
                    .sum::<f64>()
                    / c as f64;
                sum[s + step] += err;
                count[s + step] += 1;
            }
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &k)| s / k as f64).collect())
}

/// Threshold at the linearly interpolated `q`-quantile of validation scores.
pub fn calibrate_threshold(val_scores: &[f64], q: f64) -> Result<AnomalyCriterion> {
    if val_scores.is_empty() {
        return Err(Error::Invalid("cannot calibrate on empty scores".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig {
            field: "q",
            reason: format!("{q} outside (0, 1)"),
        });
    }
    let mut sorted = val_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(AnomalyCriterion {
        threshold: sorted[lo] + frac * (sorted[hi] - sorted[lo]),
        q,
    })
}

pub fn flag_scores(scores: &[f64], criterion: &AnomalyCriterion) -> Vec<bool> {
    scores.iter().map(|&s| s > criterion.threshold).collect()
}

pub fn detect_anomalies(
    model: &MultiScaleMixer,
    frame: &SeriesFrame,
    criterion: &AnomalyCriterion,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<bool>> {
    Ok(flag_scores(
        &anomaly_scores(model, frame, stride, batch_size)?,
        criterion,
    ))
}
