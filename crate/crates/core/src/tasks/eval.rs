use super::mix_seed;
use crate::data::{draw_mask, WindowDataset};
use crate::metrics::{accuracy, point_metrics, smape, MetricReport};
use crate::model::{MultiScaleMixer, TaskKind};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Masked time steps of window `i` under run seed `seed`.
pub fn window_mask(seq_len: usize, ratio: f64, seed: u64, i: usize) -> Result<Vec<bool>> {
    Ok(draw_mask(seq_len, ratio, mix_seed(&[seed, i as u64]))?)
}

/// Model outputs for every window, concatenated row-major. `masks[i]` hides
/// time steps of window `i` (imputation).
pub fn predict_windows(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    batch_size: usize,
    masks: Option<&[Vec<bool>]>,
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::new();
    for chunk in all.chunks(batch_size.max(1)) {
        let x = ds.inputs(chunk)?;
        let observed: Option<Vec<bool>> = masks.map(|m| {
            chunk
                .iter()
                .flat_map(|&i| m[i].iter().map(|h| !h))
                .collect()
        });
        out.extend(model.predict(&x, observed.as_deref())?.to_vec());
    }
    Ok(out)
}

/// Repeats each channel's last input value for `horizon` steps.
pub fn persistence_forecast(input: &[f64], channels: usize, horizon: usize) -> Vec<f64> {
    let last = &input[input.len() - channels..];
    (0..horizon).flat_map(|_| last.iter().copied()).collect()
}

#[derive(Debug, Clone)]
pub struct ForecastEval {
    pub report: MetricReport,
    /// `[windows, H, C]` row-major.
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

/// MSE/MAE/RMSE/MAPE/SMAPE of the model plus the persistence baseline.
pub fn evaluate_forecast(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    batch_size: usize,
) -> Result<ForecastEval> {
    let TaskKind::Forecast { horizon } = model.config.task else {
        return Err(Error::Invalid(
            "evaluate_forecast needs a forecasting model".into(),
        ));
    };
    let predictions = predict_windows(model, ds, batch_size, None)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let targets = ds.sequence_targets(&all)?.to_vec();
    let baseline: Vec<f64> = ds
        .windows
        .iter()
        .flat_map(|w| persistence_forecast(&w.input, ds.channels, horizon))
        .collect();
    let mut report = MetricReport::new(horizon, 1);
    report.extend_points("", &point_metrics(&predictions, &targets)?);
    report.insert("smape", smape(&predictions, &targets)?.0);
    let base = point_metrics(&baseline, &targets)?;
    report.insert("persistence_mse", base.mse);
    report.insert("persistence_mae", base.mae);
    report.insert("windows", ds.len() as f64);
    Ok(ForecastEval {
        report,
        predictions,
        targets,
    })
}

#[derive(Debug, Clone)]
pub struct ImputationEval {
    pub report: MetricReport,
    /// `[windows, T, C]` row-major.
    pub reconstruction: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
}

/// Masks `ratio` of each window's time steps, reconstructs, and scores the
/// hidden cells only, alongside a per-channel observed-mean fill.
pub fn run_imputation(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    ratio: f64,
    seed: u64,
    batch_size: usize,
) -> Result<ImputationEval> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig {
            field: "mask_ratio",
            reason: format!("{ratio} outside (0, 1)"),
        });
    }
    let (t, c) = (ds.seq_len, ds.channels);
    let masks = (0..ds.len())
        .map(|i| window_mask(t, ratio, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let reconstruction = predict_windows(model, ds, batch_size, Some(&masks))?;
    let (mut pred, mut actual, mut fill) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (w, mask)) in ds.windows.iter().zip(&masks).enumerate() {
        let observed = mask.iter().filter(|m| !**m).count().max(1) as f64;
        let means: Vec<f64> = (0..c)
            .map(|ch| {
                (0..t)
                    .filter(|&s| !mask[s])
                    .map(|s| w.input[s * c + ch])
                    .sum::<f64>()
                    / observed
            })
            .collect();
        for s in (0..t).filter(|&s| mask[s]) {
            for ch in 0..c {
                pred.push(reconstruction[(i * t + s) * c + ch]);
                actual.push(w.input[s * c + ch]);
                fill.push(means[ch]);
            }
        }
    }
    let mut report = MetricReport::new(t, 1);
    report.extend_points("", &point_metrics(&pred, &actual)?);
    let base = point_metrics(&fill, &actual)?;
    report.insert("mean_fill_mse", base.mse);
    report.insert("mean_fill_mae", base.mae);
    report.insert("mask_ratio", ratio);
    report.insert("masked_cells", pred.len() as f64);
    Ok(ImputationEval {
        report,
        reconstruction,
        masks,
    })
}

/// Row-wise argmax of a row-major `[rows, k]` slice; ties go to the lowest index.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<usize> {
    values
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Predicted class of each window in a `[B, T, C]` batch.
pub fn classify(model: &MultiScaleMixer, batch: &Tensor) -> Result<Vec<usize>> {
    let TaskKind::Classification { n_classes } = model.config.task else {
        return Err(Error::Invalid(
            "classify needs a classification model".into(),
        ));
    };
    Ok(argmax_rows(
        &model.predict(batch, None)?.to_vec(),
        n_classes,
    ))
}

/// Accuracy report and the predicted classes.
pub fn evaluate_classification(
    model: &MultiScaleMixer,
    ds: &WindowDataset,
    batch_size: usize,
) -> Result<(MetricReport, Vec<usize>)> {
    let TaskKind::Classification { n_classes } = model.config.task else {
        return Err(Error::Invalid(
            "evaluate_classification needs a classification model".into(),
        ));
    };
    let logits = predict_windows(model, ds, batch_size, None)?;
    let pred = argmax_rows(&logits, n_classes);
    let truth = ds.labels(&(0..ds.len()).collect::<Vec<_>>())?;
    let mut report = MetricReport::new(1, 1);
    report.insert("accuracy", accuracy(&pred, &truth)?);
    report.insert("windows", ds.len() as f64);
    Ok((report, pred))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax_rows(&[0.1, 0.9, 0.0, 0.5, 0.5, 0.0], 3), vec![1, 0]);
    }

    #[test]
    fn persistence_repeats_last_row() {
        assert_eq!(
            persistence_forecast(&[1., 2., 3., 4.], 2, 2),
            vec![3., 4., 3., 4.]
        );
    }
}
