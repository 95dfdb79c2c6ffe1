use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, SeriesFrame};

/// Synthetic generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthSpec {
    MultiSine {
        periods: Vec<f64>,
        amplitudes: Vec<f64>,
        trend: f64,
        noise: f64,
    },
    ClassMixture {
        /// Period set of each class.
        class_periods: Vec<Vec<f64>>,
        segment_len: usize,
        noise: f64,
    },
    Spiky {
        periods: Vec<f64>,
        amplitudes: Vec<f64>,
        trend: f64,
        noise: f64,
        rate: f64,
        /// Spike size in units of the clean channel's standard deviation.
        magnitude: f64,
    },
}

impl SynthSpec {
    pub const KINDS: [&'static str; 3] = ["multi_sine", "class_mixture", "spiky"];

    pub fn kind(&self) -> &'static str {
        match self {
            SynthSpec::MultiSine { .. } => "multi_sine",
            SynthSpec::ClassMixture { .. } => "class_mixture",
            SynthSpec::Spiky { .. } => "spiky",
        }
    }

    /// Human-readable generative equation.
    pub fn equation(&self) -> String {
        match self {
            SynthSpec::MultiSine { .. } => {
                "x_c(t) = sum_i a_i sin(2 pi t / P_i + pi c / C) + trend t + noise e_ct, e ~ N(0,1)".into()
            }
            SynthSpec::ClassMixture { .. } => "segment s of class k_s ~ U{0..K-1}, phase phi_s ~ U[0, 2 pi): \
                 x_c(t) = sum_{P in periods[k_s]} sin(2 pi t / P + phi_s + pi c / C) + noise e_ct; \
                 column 'label' holds k_s"
                .into(),
            SynthSpec::Spiky { .. } => "multi-sine base; each row with probability rate gets \
                 +/- magnitude * std_c added to one uniformly drawn channel c; column 'label' flags spiked rows"
                .into(),
        }
    }
}

/// Generated frame plus its generative equation and per-row labels, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Includes a trailing `label` column for labelled specs.
    pub frame: SeriesFrame,
    pub equation: String,
    pub labels: Option<Vec<usize>>,
}

fn channel_names(c: usize) -> Vec<String> {
    (0..c).map(|j| format!("x{j}")).collect()
}

fn multi_sine(
    periods: &[f64],
    amplitudes: &[f64],
    trend: f64,
    noise: f64,
    n: usize,
    c: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if periods.len() != amplitudes.len() || periods.iter().any(|&p| !(p > 0.0)) {
        return Err(DataError::Invalid(
            "multi-sine needs positive periods, one amplitude each".into(),
        ));
    }
    let mut v = Vec::with_capacity(n * c);
    for t in 0..n {
        for ch in 0..c {
            let phase = PI * ch as f64 / c as f64;
            let mut x: f64 = periods
                .iter()
                .zip(amplitudes)
                .map(|(p, a)| a * (2.0 * PI * t as f64 / p + phase).sin())
                .sum();
            x += trend * t as f64;
            if noise > 0.0 {
                x += noise * rng.sample::<f64, _>(StandardNormal);
            }
            v.push(x);
        }
    }
    Ok(v)
}

fn with_labels(c: usize, values: &[f64], labels: &[usize]) -> Result<SeriesFrame> {
    let mut names = channel_names(c);
    names.push("label".into());
    let mut out = Vec::with_capacity(values.len() + labels.len());
    for (row, &l) in values.chunks(c).zip(labels) {
        out.extend_from_slice(row);
        out.push(l as f64);
    }
    SeriesFrame::new(names, out)
}

/// Deterministic in `(spec, n, channels, seed)`.
pub fn synth_generate(
    spec: &SynthSpec,
    n: usize,
    channels: usize,
    seed: u64,
) -> Result<SynthOutput> {
    if n == 0 || channels == 0 {
        return Err(DataError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let equation = spec.equation();
    match spec {
        SynthSpec::MultiSine {
            periods,
            amplitudes,
            trend,
            noise,
        } => {
            let v = multi_sine(periods, amplitudes, *trend, *noise, n, channels, &mut rng)?;
            Ok(SynthOutput {
                frame: SeriesFrame::new(channel_names(channels), v)?,
                equation,
                labels: None,
            })
        }
        SynthSpec::ClassMixture {
            class_periods,
            segment_len,
            noise,
        } => {
            if class_periods.len() < 2 || *segment_len == 0 {
                return Err(DataError::Invalid(
                    "class mixture needs ≥ 2 classes and a positive segment length".into(),
                ));
            }
            let mut v = Vec::with_capacity(n * channels);
            let mut labels = Vec::with_capacity(n);
            let (mut class, mut phi) = (0, 0.0);
            for t in 0..n {
                if t % segment_len == 0 {
                    class = rng.gen_range(0..class_periods.len());
                    phi = rng.gen_range(0.0..2.0 * PI);
                }
                for ch in 0..channels {
                    let phase = phi + PI * ch as f64 / channels as f64;
                    let mut x: f64 = class_periods[class]
                        .iter()
                        .map(|p| (2.0 * PI * t as f64 / p + phase).sin())
                        .sum();
                    if *noise > 0.0 {
                        x += noise * rng.sample::<f64, _>(StandardNormal);
                    }
                    v.push(x);
                }
                labels.push(class);
            }
            Ok(SynthOutput {
                frame: with_labels(channels, &v, &labels)?,
                equation,
                labels: Some(labels),
            })
        }
        SynthSpec::Spiky {
            periods,
            amplitudes,
            trend,
            noise,
            rate,
            magnitude,
        } => {
            let v = multi_sine(periods, amplitudes, *trend, *noise, n, channels, &mut rng)?;
            let base = SeriesFrame::new(channel_names(channels), v)?;
            let (spiked, flags) = inject_spikes(&base, *rate, *magnitude, seed ^ 0x5bd1_e995)?;
            let labels: Vec<usize> = flags.iter().map(|&f| usize::from(f)).collect();
            Ok(SynthOutput {
                frame: with_labels(channels, spiked.values(), &labels)?,
                equation,
                labels: Some(labels),
            })
        }
    }
}

/// Adds `±magnitude·std_c` to one random channel of each row hit with
/// probability `rate`; returns the spiked frame and per-row flags.
pub fn inject_spikes(
    frame: &SeriesFrame,
    rate: f64,
    magnitude: f64,
    seed: u64,
) -> Result<(SeriesFrame, Vec<bool>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::Ratio(rate));
    }
    let c = frame.channels();
    let std: Vec<f64> = (0..c)
        .map(|j| {
            let col = frame.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64).sqrt()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = frame.values().to_vec();
    let mut flags = vec![false; frame.rows()];
    for (t, flag) in flags.iter_mut().enumerate() {
        if rate > 0.0 && rng.gen_bool(rate) {
            let ch = rng.gen_range(0..c);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            values[t * c + ch] += sign * magnitude * std[ch];
            *flag = true;
        }
    }
    Ok((SeriesFrame::new(frame.names().to_vec(), values)?, flags))
}
