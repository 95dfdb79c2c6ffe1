use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use tspm_core::data::{
    chrono_split, inject_spikes, load_csv, make_labeled_windows, make_reconstruction_windows,
    make_windows, synth_generate, Normalizer, SeriesFrame, SynthSpec, WindowDataset,
};
use tspm_core::metrics::{cka_matrix, detection_metrics, MetricReport};
use tspm_core::model::{MultiScaleMixer, TaskKind};
use tspm_core::spectral::top_k_periods;
use tspm_core::tasks::{
    anomaly_scores, calibrate_threshold, evaluate_classification, evaluate_forecast, flag_scores,
    run_imputation, train, TrainReport,
};
use tspm_core::Tensor;

use crate::checkpoint::{apply_checkpoint, load_checkpoint, save_checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::CliError;

const EVAL_BATCH: usize = 64;
const CKA_MAX_WINDOWS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CliError::Config {
                field: "split".into(),
                reason: format!("unknown split {other:?}"),
            }),
        }
    }
}

/// Normalized splits, their windows and any per-row labels.
pub struct Prepared {
    pub frames: [SeriesFrame; 3],
    pub windows: [WindowDataset; 3],
    pub labels: [Option<Vec<f64>>; 3],
    pub normalizer: Normalizer,
}

impl Prepared {
    fn index(split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

fn base_spec(spec: &SynthSpec) -> SynthSpec {
    match spec {
        SynthSpec::Spiky {
            periods,
            amplitudes,
            trend,
            noise,
            ..
        } => SynthSpec::MultiSine {
            periods: periods.clone(),
            amplitudes: amplitudes.clone(),
            trend: *trend,
            noise: *noise,
        },
        other => other.clone(),
    }
}

/// Raw frame, possibly with the label column still attached.
fn load_source(cfg: &RunConfig) -> Result<SeriesFrame, CliError> {
    match &cfg.source {
        DataSource::Csv(path) => {
            if !path.exists() {
                return Err(CliError::MissingInput(path.display().to_string()));
            }
            Ok(load_csv(path)?)
        }
        DataSource::Synthetic {
            spec,
            rows,
            channels,
        } => {
            // anomaly runs train on the clean base; spikes go into the test split only
            let spec = if cfg.model.task == TaskKind::AnomalyDetection {
                base_spec(spec)
            } else {
                spec.clone()
            };
            Ok(synth_generate(&spec, *rows, *channels, cfg.train.seed)?.frame)
        }
    }
}

fn injection(cfg: &RunConfig) -> Option<(f64, f64)> {
    match (&cfg.source, cfg.model.task) {
        (
            DataSource::Synthetic {
                spec: SynthSpec::Spiky {
                    rate, magnitude, ..
                },
                ..
            },
            TaskKind::AnomalyDetection,
        ) => Some((*rate, *magnitude)),
        (DataSource::Synthetic { .. }, TaskKind::AnomalyDetection) => {
            Some((cfg.inject_rate, cfg.inject_magnitude))
        }
        _ => None,
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let frame = load_source(cfg)?;
    let m = &cfg.model;
    let min_len = match m.task {
        TaskKind::Forecast { horizon } => m.seq_len + horizon,
        _ => m.seq_len,
    };
    let parts = chrono_split(&frame, cfg.split, min_len)?;
    let mut frames = Vec::with_capacity(3);
    let mut labels = Vec::with_capacity(3);
    for part in parts {
        if part.names().iter().any(|n| n == &cfg.label_column) {
            let (values, lab) = part.take_column(&cfg.label_column)?;
            frames.push(values);
            labels.push(Some(lab));
        } else {
            frames.push(part);
            labels.push(None);
        }
    }
    if frames[0].channels() != m.channels {
        return Err(CliError::Config {
            field: "data.channels".into(),
            reason: format!(
                "data has {} value columns, model expects {}",
                frames[0].channels(),
                m.channels
            ),
        });
    }
    if let Some((rate, magnitude)) = injection(cfg) {
        let (spiked, flags) =
            inject_spikes(&frames[2], rate, magnitude, cfg.train.seed ^ 0x5bd1_e995)?;
        frames[2] = spiked;
        labels[2] = Some(flags.iter().map(|&f| f64::from(u8::from(f))).collect());
    }
    let normalizer = Normalizer::fitted(&frames[0]);
    let frames: Vec<SeriesFrame> = frames
        .iter()
        .map(|f| normalizer.apply(f))
        .collect::<Result<_, _>>()?;
    let mut windows = Vec::with_capacity(3);
    for (i, f) in frames.iter().enumerate() {
        let stride = if i == 0 { cfg.stride } else { cfg.eval_stride };
        let ds = match m.task {
            TaskKind::Forecast { horizon } => make_windows(f, m.seq_len, horizon, stride)?,
            TaskKind::Imputation | TaskKind::AnomalyDetection => {
                make_reconstruction_windows(f, m.seq_len, stride)?
            }
            TaskKind::Classification { .. } => {
                let lab = labels[i].as_ref().ok_or_else(|| CliError::Config {
                    field: "data.label_column".into(),
                    reason: format!("classification needs a {:?} column", cfg.label_column),
                })?;
                let lab: Vec<usize> = lab.iter().map(|&v| v as usize).collect();
                make_labeled_windows(f, &lab, m.seq_len, stride)?
            }
        };
        windows.push(ds);
    }
    Ok(Prepared {
        frames: frames
            .try_into()
            .map_err(|_| CliError::Io("split count".into()))?,
        windows: windows
            .try_into()
            .map_err(|_| CliError::Io("split count".into()))?,
        labels: labels
            .try_into()
            .map_err(|_| CliError::Io("split count".into()))?,
        normalizer,
    })
}

/// Metrics on one split plus a CSV dump of the scored values.
pub fn evaluate(
    cfg: &RunConfig,
    model: &MultiScaleMixer,
    data: &Prepared,
    split: Split,
) -> Result<(MetricReport, String), CliError> {
    let idx = Prepared::index(split);
    let ds = &data.windows[idx];
    let mut dump = String::new();
    let report = match model.config.task {
        TaskKind::Forecast { horizon } => {
            let ev = evaluate_forecast(model, ds, EVAL_BATCH)?;
            dump.push_str("window,step,channel,prediction,target\n");
            let c = ds.channels;
            for (i, (p, t)) in ev.predictions.iter().zip(&ev.targets).enumerate() {
                let _ = writeln!(
                    dump,
                    "{},{},{},{p},{t}",
                    i / (horizon * c),
                    (i / c) % horizon,
                    i % c
                );
            }
            ev.report
        }
        TaskKind::Imputation => {
            let ev = run_imputation(model, ds, cfg.train.mask_ratio, cfg.train.seed, EVAL_BATCH)?;
            dump.push_str("window,step,channel,prediction,target\n");
            let (t, c) = (ds.seq_len, ds.channels);
            for (w, (win, mask)) in ds.windows.iter().zip(&ev.masks).enumerate() {
                for s in (0..t).filter(|&s| mask[s]) {
                    for ch in 0..c {
                        let p = ev.reconstruction[(w * t + s) * c + ch];
                        let _ = writeln!(dump, "{w},{s},{ch},{p},{}", win.input[s * c + ch]);
                    }
                }
            }
            ev.report
        }
        TaskKind::Classification { .. } => {
            let (report, pred) = evaluate_classification(model, ds, EVAL_BATCH)?;
            let truth = ds.labels(&(0..ds.len()).collect::<Vec<_>>())?;
            dump.push_str("window,prediction,label\n");
            for (i, (p, l)) in pred.iter().zip(&truth).enumerate() {
                let _ = writeln!(dump, "{i},{p},{l}");
            }
            report
        }
        TaskKind::AnomalyDetection => {
            let val_scores = anomaly_scores(model, &data.frames[1], cfg.eval_stride, EVAL_BATCH)?;
            let criterion = calibrate_threshold(&val_scores, cfg.anomaly_q)?;
            let scores = anomaly_scores(model, &data.frames[idx], cfg.eval_stride, EVAL_BATCH)?;
            let flags = flag_scores(&scores, &criterion);
            let mut report = MetricReport::new(1, 1);
            report.insert("threshold", criterion.threshold);
            report.insert("q", criterion.q);
            report.insert("flagged", flags.iter().filter(|&&f| f).count() as f64);
            report.insert("steps", flags.len() as f64);
            let truth: Option<Vec<bool>> = data.labels[idx]
                .as_ref()
                .map(|l| l.iter().map(|&v| v != 0.0).collect());
            dump.push_str(if truth.is_some() {
                "step,score,flag,label\n"
            } else {
                "step,score,flag\n"
            });
            for (i, (s, f)) in scores.iter().zip(&flags).enumerate() {
                match &truth {
                    Some(t) => writeln!(dump, "{i},{s},{},{}", u8::from(*f), u8::from(t[i])),
                    None => writeln!(dump, "{i},{s},{}", u8::from(*f)),
                }
                .expect("writing to a String cannot fail");
            }
            if let Some(t) = truth {
                let d = detection_metrics(&flags, &t).map_err(tspm_core::Error::from)?;
                report.insert("precision", d.precision);
                report.insert("recall", d.recall);
                report.insert("f1", d.f1);
                report.insert("anomalies", (d.true_positives + d.false_negatives) as f64);
            }
            report
        }
    };
    Ok((report, dump))
}

#[derive(Debug, Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub train: TrainReport,
    pub metrics: MetricReport,
}

pub fn cmd_train(config: &Path) -> Result<TrainOutcome, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let data = prepare(&cfg)?;
    let mut model = MultiScaleMixer::new(cfg.model.clone(), cfg.train.seed)?;
    eprintln!(
        "training {} model: {} parameters, {} train / {} val windows",
        cfg.model.task.name(),
        model.params().num_values(),
        data.windows[0].len(),
        data.windows[1].len()
    );
    let report = train(&mut model, &data.windows[0], &data.windows[1], &cfg.train)?;
    eprintln!(
        "best epoch {} of {}, val loss {:.6}, {:.1}s",
        report.best_epoch,
        report.val_losses.len(),
        report.best_val_loss(),
        report.seconds
    );
    let checkpoint = cfg.checkpoint_path();
    save_checkpoint(model.params(), &checkpoint)?;
    let (metrics, _) = evaluate(&cfg, &model, &data, Split::Test)?;
    let outcome = TrainOutcome {
        checkpoint,
        train: report,
        metrics,
    };
    let json = serde_json::to_string_pretty(&outcome).expect("report serializes");
    std::fs::write(cfg.report_path(), &json).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(outcome)
}

fn restore(cfg: &RunConfig, checkpoint: &Path) -> Result<MultiScaleMixer, CliError> {
    if !checkpoint.exists() {
        return Err(CliError::MissingInput(checkpoint.display().to_string()));
    }
    let loaded = load_checkpoint(checkpoint)?;
    let model = MultiScaleMixer::new(cfg.model.clone(), cfg.train.seed)?;
    apply_checkpoint(model.params(), &loaded)?;
    Ok(model)
}

pub fn cmd_eval(
    config: &Path,
    checkpoint: &Path,
    split: Split,
    dump: Option<&Path>,
) -> Result<MetricReport, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let model = restore(&cfg, checkpoint)?;
    let data = prepare(&cfg)?;
    let (report, csv) = evaluate(&cfg, &model, &data, split)?;
    if let Some(path) = dump {
        std::fs::write(path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

pub fn cmd_inspect_periods(config: &Path, csv: &Path) -> Result<serde_json::Value, CliError> {
    let cfg = RunConfig::from_path(config)?;
    if !csv.exists() {
        return Err(CliError::MissingInput(csv.display().to_string()));
    }
    let mut frame = load_csv(csv)?;
    if frame.names().iter().any(|n| n == &cfg.label_column) {
        frame = frame.take_column(&cfg.label_column)?.0;
    }
    let t = cfg.model.seq_len;
    if frame.rows() < t {
        return Err(CliError::Config {
            field: "model.seq_len".into(),
            reason: format!("csv has {} rows, fewer than {t}", frame.rows()),
        });
    }
    let window = frame.slice_rows(0, t)?;
    let rep = Tensor::constant(&[t, window.channels()], window.values().to_vec())
        .map_err(tspm_core::Error::from)?;
    let spectrum = top_k_periods(&rep, cfg.model.top_k)?;
    Ok(serde_json::to_value(&spectrum.entries).expect("entries serialize"))
}

pub fn cmd_analyze_cka(config: &Path, checkpoint: &Path) -> Result<serde_json::Value, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let model = restore(&cfg, checkpoint)?;
    let data = prepare(&cfg)?;
    let ds = &data.windows[2];
    let n = ds.len().min(CKA_MAX_WINDOWS);
    let layers = cfg.model.layers;
    let width: usize = cfg
        .model
        .scale_lengths()
        .iter()
        .map(|l| l * cfg.model.d_model)
        .sum();
    let mut reps: Vec<Vec<f64>> = vec![Vec::with_capacity(n * width); layers];
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let out = model.forward(&ds.inputs(chunk)?, None)?;
        for (l, trace) in out.layer_trace.iter().enumerate() {
            let per_scale: Vec<Vec<f64>> = trace.levels.iter().map(Tensor::to_vec).collect();
            for b in 0..chunk.len() {
                for level in &per_scale {
                    let w = level.len() / chunk.len();
                    reps[l].extend_from_slice(&level[b * w..(b + 1) * w]);
                }
            }
        }
    }
    let matrix = cka_matrix(&reps.into_iter().map(|r| (r, width)).collect::<Vec<_>>())
        .map_err(tspm_core::Error::from)?;
    Ok(json!({
        "layers": layers,
        "windows": n,
        "first_last": matrix[0][layers - 1],
        "matrix": matrix,
    }))
}

pub fn cmd_synth(config: &Path, out: &Path) -> Result<serde_json::Value, CliError> {
    let cfg = RunConfig::from_path(config)?;
    let DataSource::Synthetic {
        spec,
        rows,
        channels,
    } = &cfg.source
    else {
        return Err(CliError::Config {
            field: "data.source".into(),
            reason: "synth needs a synthetic data source".into(),
        });
    };
    let generated = synth_generate(spec, *rows, *channels, cfg.train.seed)?;
    generated.frame.write_csv(out)?;
    Ok(json!({
        "path": out,
        "rows": generated.frame.rows(),
        "columns": generated.frame.names(),
        "kind": spec.kind(),
        "equation": generated.equation,
    }))
}
