//! CSV ingestion, chronological splits, windowing, normalization, synthetic
//! generators and imputation masks.

mod synth;

pub use synth::{inject_spikes, synth_generate, SynthOutput, SynthSpec};

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("row {row}: expected {expected} cells, found {got}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row}, column {column:?}: {value:?} is not a finite number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("frame has no rows or no value columns")]
    Empty,
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("empty {split}")]
    EmptySplit { split: &'static str },
    #[error("{split} split has {len} rows, needs at least {needed}")]
    SplitTooShort {
        split: &'static str,
        len: usize,
        needed: usize,
    },
    #[error("series of {len} rows is shorter than the {needed} needed")]
    TooShort { len: usize, needed: usize },
    #[error("normalizer applied before fit")]
    NotFitted,
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("ratio {0} outside (0, 1)")]
    Ratio(f64),
    #[error("unknown synthetic spec {0:?}")]
    UnknownSpec(String),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, DataError>;

/// Row-major `[rows, channels]` values with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    values: Vec<f64>,
    rows: usize,
    names: Vec<String>,
}

impl SeriesFrame {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let c = names.len();
        if c == 0 || values.is_empty() || !values.len().is_multiple_of(c) {
            return Err(DataError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonNumeric {
                row: i / c + 1,
                column: names[i % c].clone(),
                value: values[i].to_string(),
            });
        }
        Ok(SeriesFrame {
            rows: values.len() / c,
            values,
            names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.values[i * self.channels() + j])
            .collect()
    }

    /// Rows `start..end` as a new frame.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(DataError::Invalid(format!(
                "row range {start}..{end} of {}",
                self.rows
            )));
        }
        let c = self.channels();
        Ok(SeriesFrame {
            values: self.values[start * c..end * c].to_vec(),
            rows: end - start,
            names: self.names.clone(),
        })
    }

    /// Removes column `name`, returning the remaining frame and its values.
    pub fn take_column(&self, name: &str) -> Result<(SeriesFrame, Vec<f64>)> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::Invalid(format!("no column named {name:?}")))?;
        let c = self.channels();
        let names: Vec<String> = self
            .names
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, n)| n.clone())
            .collect();
        let values = self
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| i % c != j)
            .map(|(_, &v)| v)
            .collect();
        Ok((SeriesFrame::new(names, values)?, self.column(j)))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.names).map_err(io)?;
        for i in 0..self.rows {
            w.write_record(self.row(i).iter().map(|v| format!("{v}")))
                .map_err(io)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Reads a headed CSV of floats; a leading `date`/`timestamp` column is skipped.
pub fn load_csv(path: &Path) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let skip = header
        .first()
        .is_some_and(|h| matches!(h.to_ascii_lowercase().as_str(), "date" | "timestamp"));
    let first = usize::from(skip);
    let names = header[first..].to_vec();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(DataError::Ragged {
                row,
                expected: header.len(),
                got: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate().skip(first) {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(DataError::NonNumeric {
                        row,
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })
                }
            }
        }
    }
    SeriesFrame::new(names, values)
}

fn ratio_rows(n: usize, r: f64) -> usize {
    (n as f64 * r + 1e-9).floor() as usize
}

/// Contiguous train/validation/test cut; each split needs `min_len` rows.
pub fn chrono_split(
    frame: &SeriesFrame,
    ratios: (f64, f64, f64),
    min_len: usize,
) -> Result<[SeriesFrame; 3]> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !r.is_finite() || *r < 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(format!(
            "{ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let n = frame.rows();
    let n_train = ratio_rows(n, a);
    let n_val = ratio_rows(n, b);
    let n_test = n - (n_train + n_val).min(n);
    let mut out = Vec::with_capacity(3);
    let mut start = 0;
    for (split, len) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if len == 0 {
            return Err(DataError::EmptySplit { split });
        }
        if len < min_len {
            return Err(DataError::SplitTooShort {
                split,
                len,
                needed: min_len,
            });
        }
        out.push(frame.slice_rows(start, start + len)?);
        start += len;
    }
    Ok(out.try_into().expect("three splits"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Row-major `[len, C]`.
    Sequence(Vec<f64>),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// First row of the input within the source frame.
    pub start: usize,
    /// Row-major `[T, C]`.
    pub input: Vec<f64>,
    pub target: Target,
}

/// Shape-uniform windows cut from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub windows: Vec<Window>,
    pub seq_len: usize,
    pub channels: usize,
    /// Rows covered by input plus target; `seq_len + horizon` for forecasting.
    pub span: usize,
}

fn window_count(n: usize, span: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(DataError::Invalid("stride must be at least 1".into()));
    }
    if n < span {
        return Err(DataError::TooShort {
            len: n,
            needed: span,
        });
    }
    Ok((n - span) / stride + 1)
}

/// Forecast windows: input rows `[s, s+T)`, target rows `[s+T, s+T+H)`.
pub fn make_windows(
    frame: &SeriesFrame,
    seq_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowDataset> {
    if seq_len == 0 {
        return Err(DataError::Invalid(
            "window length must be at least 1".into(),
        ));
    }
    let span = seq_len + horizon;
    let count = window_count(frame.rows(), span, stride)?;
    let c = frame.channels();
    let v = frame.values();
    let windows = (0..count)
        .map(|i| {
            let s = i * stride;
            Window {
                start: s,
                input: v[s * c..(s + seq_len) * c].to_vec(),
                target: Target::Sequence(v[(s + seq_len) * c..(s + span) * c].to_vec()),
            }
        })
        .collect();
    Ok(WindowDataset {
        windows,
        seq_len,
        channels: c,
        span,
    })
}

/// Windows whose target is the input itself.
pub fn make_reconstruction_windows(
    frame: &SeriesFrame,
    seq_len: usize,
    stride: usize,
) -> Result<WindowDataset> {
    let mut ds = make_windows(frame, seq_len, 0, stride)?;
    for w in &mut ds.windows {
        w.target = Target::Sequence(w.input.clone());
    }
    Ok(ds)
}

/// Windows labelled by `labels[row]`; windows whose rows disagree are skipped.
pub fn make_labeled_windows(
    frame: &SeriesFrame,
    labels: &[usize],
    seq_len: usize,
    stride: usize,
) -> Result<WindowDataset> {
    if labels.len() != frame.rows() {
        return Err(DataError::Invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            frame.rows()
        )));
    }
    let mut ds = make_windows(frame, seq_len, 0, stride)?;
    ds.windows.retain_mut(|w| {
        let seg = &labels[w.start..w.start + seq_len];
        if seg.iter().all(|&l| l == seg[0]) {
            w.target = Target::Class(seg[0]);
            true
        } else {
            false
        }
    });
    if ds.windows.is_empty() {
        return Err(DataError::Invalid("no window has a single label".into()));
    }
    Ok(ds)
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// `[B, T, C]` inputs of the selected windows.
    pub fn inputs(&self, idx: &[usize]) -> crate::Result<Tensor> {
        let data = idx
            .iter()
            .flat_map(|&i| self.windows[i].input.iter().copied())
            .collect();
        Ok(Tensor::constant(
            &[idx.len(), self.seq_len, self.channels],
            data,
        )?)
    }

    /// `[B, len, C]` sequence targets of the selected windows.
    pub fn sequence_targets(&self, idx: &[usize]) -> crate::Result<Tensor> {
        let mut data = Vec::new();
        for &i in idx {
            match &self.windows[i].target {
                Target::Sequence(v) => data.extend_from_slice(v),
                Target::Class(_) => {
                    return Err(DataError::Invalid("window has a class target".into()).into())
                }
            }
        }
        let len = data.len() / (idx.len().max(1) * self.channels);
        Ok(Tensor::constant(&[idx.len(), len, self.channels], data)?)
    }

    pub fn labels(&self, idx: &[usize]) -> crate::Result<Vec<usize>> {
        idx.iter()
            .map(|&i| match self.windows[i].target {
                Target::Class(k) => Ok(k),
                Target::Sequence(_) => {
                    Err(DataError::Invalid("window has a sequence target".into()).into())
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ChannelStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Per-channel z-score fitted on the training split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Normalizer {
    stats: Option<ChannelStats>,
}

impl Normalizer {
    pub fn new() -> Self {
        Normalizer::default()
    }

    pub fn fitted(frame: &SeriesFrame) -> Self {
        let mut n = Normalizer::new();
        n.fit(frame);
        n
    }

    /// Zero-variance channels get std 1.
    pub fn fit(&mut self, frame: &SeriesFrame) {
        let (n, c) = (frame.rows() as f64, frame.channels());
        let mut mean = vec![0.0; c];
        for i in 0..frame.rows() {
            for (m, v) in mean.iter_mut().zip(frame.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for i in 0..frame.rows() {
            for ((s, v), m) in var.iter_mut().zip(frame.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt())
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        self.stats = Some(ChannelStats { mean, std });
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.stats.as_ref().map(|s| s.mean.as_slice())
    }

    pub fn std(&self) -> Option<&[f64]> {
        self.stats.as_ref().map(|s| s.std.as_slice())
    }

    fn map(&self, values: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Result<Vec<f64>> {
        let s = self.stats.as_ref().ok_or(DataError::NotFitted)?;
        let c = s.mean.len();
        if !values.len().is_multiple_of(c) {
            return Err(DataError::ChannelMismatch {
                expected: c,
                got: values.len() % c,
            });
        }
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, s.mean[i % c], s.std[i % c]))
            .collect())
    }

    pub fn apply(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        let expected = self.mean().ok_or(DataError::NotFitted)?.len();
        if frame.channels() != expected {
            return Err(DataError::ChannelMismatch {
                expected,
                got: frame.channels(),
            });
        }
        let values = self.map(frame.values(), |v, m, s| (v - m) / s)?;
        SeriesFrame::new(frame.names().to_vec(), values)
    }

    /// Maps row-major `[*, C]` normalized values back to the data scale.
    pub fn invert(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.map(values, |v, m, s| v * s + m)
    }
}

/// `round(T·ratio)` distinct positions set to `true` (masked).
pub fn draw_mask(len: usize, ratio: f64, seed: u64) -> Result<Vec<bool>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Ratio(ratio));
    }
    let count = (len as f64 * ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; len];
    for i in sample(&mut rng, len, count) {
        mask[i] = true;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: usize, c: usize) -> SeriesFrame {
        let names = (0..c).map(|j| format!("c{j}")).collect();
        SeriesFrame::new(names, (0..rows * c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn split_arithmetic() {
        let [a, b, c] = chrono_split(&frame(100, 1), (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((a.rows(), b.rows(), c.rows()), (70, 10, 20));
        assert_eq!(c.row(0), &[80.0]);
        assert!(matches!(
            chrono_split(&frame(100, 1), (0.5, 0.5, 0.0), 1),
            Err(DataError::EmptySplit { split: "test" })
        ));
        assert!(chrono_split(&frame(100, 1), (0.7, 0.1, 0.2), 21).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&frame(100, 1), 96, 4, 1).unwrap().len(), 1);
        assert_eq!(make_windows(&frame(200, 1), 96, 4, 1).unwrap().len(), 101);
        assert!(make_windows(&frame(99, 1), 96, 4, 1).is_err());
        let w = make_windows(&frame(10, 2), 3, 2, 5).unwrap();
        assert_eq!(w.windows[1].start, 5);
        assert_eq!(
            w.windows[1].target,
            Target::Sequence(vec![16., 17., 18., 19.])
        );
    }

    #[test]
    fn labeled_windows_skip_boundaries() {
        let labels = [0, 0, 0, 1, 1, 1];
        let ds = make_labeled_windows(&frame(6, 1), &labels, 3, 1).unwrap();
        assert_eq!(ds.labels(&[0, 1]).unwrap(), vec![0, 1]);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn normalizer_contracts() {
        assert!(matches!(
            Normalizer::new().invert(&[1.0]),
            Err(DataError::NotFitted)
        ));
        let f =
            SeriesFrame::new(vec!["a".into(), "k".into()], vec![1., 5., 2., 5., 6., 5.]).unwrap();
        let n = Normalizer::fitted(&f);
        assert_eq!(n.std().unwrap()[1], 1.0);
        let z = n.apply(&f).unwrap();
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!(z.column(0).iter().sum::<f64>().abs() < 1e-12);
        let back = n.invert(z.values()).unwrap();
        for (x, y) in back.iter().zip(f.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_counts() {
        assert_eq!(
            draw_mask(8, 0.5, 1).unwrap().iter().filter(|&&m| m).count(),
            4
        );
        assert_eq!(
            draw_mask(64, 0.125, 1)
                .unwrap()
                .iter()
                .filter(|&&m| m)
                .count(),
            8
        );
        assert_eq!(
            draw_mask(64, 0.25, 9).unwrap(),
            draw_mask(64, 0.25, 9).unwrap()
        );
        assert!(draw_mask(8, 1.0, 1).is_err());
        assert!(draw_mask(8, 0.0, 1).is_err());
    }

    #[test]
    fn take_column_splits_frame() {
        let f = SeriesFrame::new(vec!["a".into(), "label".into()], vec![1., 0., 2., 1.]).unwrap();
        let (rest, lab) = f.take_column("label").unwrap();
        assert_eq!(rest.values(), &[1., 2.]);
        assert_eq!(lab, vec![0., 1.]);
    }
}
