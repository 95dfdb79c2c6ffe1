//! Forecast error metrics, M4-style scaled metrics, classification/detection
//! scores and linear CKA.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("prediction has {pred} values, actual has {actual}")]
    ShapeMismatch { pred: usize, actual: usize },
    #[error("{metric}: no values to score")]
    Empty { metric: &'static str },
    #[error("{metric}: every position excluded by a zero denominator")]
    AllExcluded { metric: &'static str },
    #[error("{metric}: zero denominator")]
    ZeroDenominator { metric: &'static str },
    #[error("in-sample series of length {len} too short for seasonality {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("representation has zero variance")]
    ZeroVariance,
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, MetricError>;

/// Named metric values; serializes as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizon: usize,
    pub seasonality: usize,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(horizon: usize, seasonality: usize) -> Self {
        MetricReport {
            horizon: horizon.max(1),
            seasonality: seasonality.max(1),
            values: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// Adds every entry of `points` under `prefix` (`"mse"` → `"{prefix}mse"`).
    pub fn extend_points(&mut self, prefix: &str, points: &PointMetrics) {
        self.insert(&format!("{prefix}mse"), points.mse);
        self.insert(&format!("{prefix}mae"), points.mae);
        self.insert(&format!("{prefix}rmse"), points.rmse);
        if let Some(m) = points.mape {
            self.insert(&format!("{prefix}mape"), m);
        }
        self.insert(
            &format!("{prefix}mape_excluded"),
            points.mape_excluded as f64,
        );
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite metric values serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Root of the mean squared error.
    pub rmse: f64,
    /// Percent; `None` when every actual is zero.
    pub mape: Option<f64>,
    /// Positions left out of MAPE because the actual is zero.
    pub mape_excluded: usize,
}

fn check_pair(pred: &[f64], actual: &[f64], metric: &'static str) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty { metric });
    }
    Ok(())
}

/// MSE, MAE, RMSE and MAPE over all positions (any channel layout).
pub fn point_metrics(pred: &[f64], actual: &[f64]) -> Result<PointMetrics> {
    check_pair(pred, actual, "point metrics")?;
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p) * (a - p))
        .sum::<f64>()
        / n;
    let mae = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p).abs())
        .sum::<f64>()
        / n;
    let (mut ape, mut used) = (0.0, 0usize);
    for (p, a) in pred.iter().zip(actual) {
        if *a != 0.0 {
            ape += ((a - p) / a).abs();
            used += 1;
        }
    }
    Ok(PointMetrics {
        mse,
        mae,
        rmse: mse.sqrt(),
        mape: (used > 0).then(|| 100.0 * ape / used as f64),
        mape_excluded: pred.len() - used,
    })
}

/// `200/F · Σ |a−p|/(|a|+|p|)` over positions with a nonzero denominator.
/// Returns the value and the number of excluded positions.
pub fn smape(pred: &[f64], actual: &[f64]) -> Result<(f64, usize)> {
    check_pair(pred, actual, "smape")?;
    let (mut sum, mut used) = (0.0, 0usize);
    for (p, a) in pred.iter().zip(actual) {
        let denom = a.abs() + p.abs();
        if denom != 0.0 {
            sum += (a - p).abs() / denom;
            used += 1;
        }
    }
    if used == 0 {
        return Err(MetricError::AllExcluded { metric: "smape" });
    }
    Ok((200.0 * sum / used as f64, pred.len() - used))
}

fn seasonal_scale(insample: &[f64], s: usize) -> Result<f64> {
    if s == 0 || insample.len() <= s {
        return Err(MetricError::TooShort {
            len: insample.len(),
            needed: s + 1,
        });
    }
    let d = insample
        .windows(s + 1)
        .map(|w| (w[s] - w[0]).abs())
        .sum::<f64>()
        / (insample.len() - s) as f64;
    if d == 0.0 {
        return Err(MetricError::ZeroDenominator { metric: "mase" });
    }
    Ok(d)
}

/// Mean absolute error scaled by the in-sample seasonal-difference MAE.
pub fn mase(pred: &[f64], actual: &[f64], insample: &[f64], s: usize) -> Result<f64> {
    check_pair(pred, actual, "mase")?;
    let scale = seasonal_scale(insample, s)?;
    let mae = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p).abs())
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mae / scale)
}

/// Repeats the last `s` in-sample values for `horizon` steps.
pub fn naive2_forecast(insample: &[f64], s: usize, horizon: usize) -> Result<Vec<f64>> {
    if s == 0 || insample.len() < s {
        return Err(MetricError::TooShort {
            len: insample.len(),
            needed: s.max(1),
        });
    }
    let cycle = &insample[insample.len() - s..];
    Ok((0..horizon).map(|i| cycle[i % s]).collect())
}

/// `½(SMAPE/SMAPE_naive2 + MASE/MASE_naive2)`.
pub fn owa(pred: &[f64], actual: &[f64], insample: &[f64], s: usize) -> Result<f64> {
    let naive = naive2_forecast(insample, s, actual.len())?;
    let (sm, _) = smape(pred, actual)?;
    let (sm_n, _) = smape(&naive, actual)?;
    let ma = mase(pred, actual, insample, s)?;
    let ma_n = mase(&naive, actual, insample, s)?;
    if sm_n == 0.0 || ma_n == 0.0 {
        return Err(MetricError::ZeroDenominator { metric: "owa" });
    }
    Ok(0.5 * (sm / sm_n + ma / ma_n))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.len(),
            actual: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty { metric: "accuracy" });
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

/// Point-wise precision, recall and F1 of boolean flags.
pub fn detection_metrics(pred: &[bool], truth: &[bool]) -> Result<DetectionMetrics> {
    if pred.len() != truth.len() {
        return Err(MetricError::ShapeMismatch {
            pred: pred.len(),
            actual: truth.len(),
        });
    }
    let count = |want_p: bool, want_t: bool| {
        pred.iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == want_p && t == want_t)
            .count()
    };
    let (tp, fp, fn_) = (count(true, true), count(true, false), count(false, true));
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectionMetrics {
        precision,
        recall,
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        zero_division,
    })
}

/// Column-centered copy of row-major `[n, d]`.
fn centered(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            out[i * d + j] -= mean;
        }
    }
    out
}

/// `AᵀB` for row-major `[n, da]`, `[n, db]`, giving `[da, db]`.
fn cross(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; da * db];
    for i in 0..n {
        let (ra, rb) = (&a[i * da..(i + 1) * da], &b[i * db..(i + 1) * db]);
        for (p, &av) in ra.iter().enumerate() {
            let row = &mut out[p * db..(p + 1) * db];
            for (o, &bv) in row.iter_mut().zip(rb) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `A Aᵀ` for row-major `[n, d]`.
fn gram(a: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v: f64 = a[i * d..(i + 1) * d]
                .iter()
                .zip(&a[j * d..(j + 1) * d])
                .map(|(p, q)| p * q)
                .sum();
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    out
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Linear CKA between row-major `x: [n, dx]` and `y: [n, dy]` (rows are samples).
pub fn cka(x: &[f64], dx: usize, y: &[f64], dy: usize) -> Result<f64> {
    if dx == 0
        || dy == 0
        || !x.len().is_multiple_of(dx)
        || !y.len().is_multiple_of(dy)
        || x.len() / dx != y.len() / dy
    {
        return Err(MetricError::Invalid(format!(
            "cka needs matching sample counts: {} / {dx} vs {} / {dy}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() / dx;
    if n < 2 {
        return Err(MetricError::Empty { metric: "cka" });
    }
    // canonical argument order makes cka(x, y) and cka(y, x) bit-identical
    let order = dx.cmp(&dy).then_with(|| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let ((x, dx), (y, dy)) = if order == Ordering::Greater {
        ((y, dy), (x, dx))
    } else {
        ((x, dx), (y, dy))
    };
    let (xc, yc) = (centered(x, n, dx), centered(y, n, dy));
    let feature_cost = dx * dx + dy * dy + dx * dy;
    let sample_cost = n * (dx + dy);
    let (num, nx, ny) = if feature_cost <= sample_cost {
        (
            sum_sq(&cross(&yc, dy, &xc, dx, n)),
            sum_sq(&cross(&xc, dx, &xc, dx, n)).sqrt(),
            sum_sq(&cross(&yc, dy, &yc, dy, n)).sqrt(),
        )
    } else {
        let (k, l) = (gram(&xc, n, dx), gram(&yc, n, dy));
        (
            k.iter().zip(&l).map(|(a, b)| a * b).sum(),
            sum_sq(&k).sqrt(),
            sum_sq(&l).sqrt(),
        )
    };
    if nx == 0.0 || ny == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((num / (nx * ny)).clamp(0.0, 1.0))
}

/// Pairwise CKA of several `[n, d_i]` representations, mirrored so the
/// matrix is exactly symmetric with a unit diagonal.
pub fn cka_matrix(reps: &[(Vec<f64>, usize)]) -> Result<Vec<Vec<f64>>> {
    let l = reps.len();
    let mut m = vec![vec![1.0; l]; l];
    for i in 0..l {
        for j in 0..i {
            let v = cka(&reps[i].0, reps[i].1, &reps[j].0, reps[j].1)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}
