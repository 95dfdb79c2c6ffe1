//! Real-input DFT amplitudes and dominant-period extraction.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// One selected frequency of a [`PeriodSpectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    #[serde(rename = "f")]
    pub frequency: usize,
    #[serde(rename = "p")]
    pub period: usize,
    pub amplitude: f64,
}

/// Top-K frequencies of an analyzed series, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSpectrum {
    pub entries: Vec<PeriodEntry>,
    pub analyzed_length: usize,
}

impl PeriodSpectrum {
    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.amplitude).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `|X_f|` for `f = 0..=L/2`.
pub fn dft_amplitudes(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "DFT needs at least 2 samples, got {n}"
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    Ok(amplitudes_with(&*fft, series))
}

fn amplitudes_with(fft: &dyn rustfft::Fft<f64>, series: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf[..=series.len() / 2].iter().map(|c| c.norm()).collect()
}

/// Relative floor below which an amplitude is treated as round-off.
const AMPLITUDE_FLOOR: f64 = 1e-12;

/// Selects the `k` strongest non-DC frequencies of a `[L, d]` or
/// `[batch, L, d]` representation. Amplitudes are averaged over channels
/// (and batch); ties go to the lower frequency.
pub fn top_k_periods(rep: &Tensor, k: usize) -> Result<PeriodSpectrum> {
    let (batch, len, channels) = match *rep.shape() {
        [l, d] => (1, l, d),
        [b, l, d] => (b, l, d),
        _ => {
            return Err(Error::Invalid(format!(
                "top_k_periods expects [L, d] or [B, L, d], got {:?}",
                rep.shape()
            )))
        }
    };
    if k == 0 {
        return Err(Error::Invalid("top_k_periods: K must be at least 1".into()));
    }
    if len < 4 {
        return Err(Error::Invalid(format!("top_k_periods: length {len} < 4")));
    }
    let nyquist = len / 2;
    let data = rep.data();
    let fft = FftPlanner::new().plan_fft_forward(len);
    // per_freq[f-1] collects |X_f| for every (batch, channel) series
    let mut per_freq: Vec<Vec<f64>> = vec![Vec::with_capacity(batch * channels); nyquist];
    let mut series = vec![0.0; len];
    for b in 0..batch {
        for c in 0..channels {
            for (t, s) in series.iter_mut().enumerate() {
                *s = data[(b * len + t) * channels + c];
            }
            let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = AMPLITUDE_FLOOR * len as f64 * scale;
            let amps = amplitudes_with(&*fft, &series);
            for f in 1..=nyquist {
                let a = amps[f];
                per_freq[f - 1].push(if a <= floor { 0.0 } else { a });
            }
        }
    }
    drop(data);
    let count = (batch * channels) as f64;
    let mut scored: Vec<(usize, f64)> = per_freq
        .into_iter()
        .enumerate()
        .map(|(i, mut vals)| {
            // order-independent sum, so channel permutations give identical bits
            vals.sort_by(f64::total_cmp);
            (i + 1, vals.iter().sum::<f64>() / count)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let entries = scored
        .into_iter()
        .take(k.min(nyquist))
        .map(|(f, amplitude)| PeriodEntry {
            frequency: f,
            period: len.div_ceil(f),
            amplitude,
        })
        .collect();
    Ok(PeriodSpectrum {
        entries,
        analyzed_length: len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_series_is_dc_only() {
        let a = dft_amplitudes(&[3.0; 16]).unwrap();
        assert_eq!(a.len(), 9);
        assert!((a[0] - 48.0).abs() < 1e-12);
        assert!(a[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(dft_amplitudes(&[1.0]).is_err());
    }

    #[test]
    fn zero_representation_falls_back_to_lowest_frequencies() {
        let rep = Tensor::zeros(&[16, 3]).unwrap();
        let s = top_k_periods(&rep, 3).unwrap();
        assert_eq!(
            s.entries.iter().map(|e| e.frequency).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(s.periods(), vec![16, 8, 6]);
    }

    #[test]
    fn k_capped_at_nyquist() {
        let rep = Tensor::zeros(&[12, 1]).unwrap();
        assert_eq!(top_k_periods(&rep, 10).unwrap().len(), 6);
    }

    #[test]
    fn sinusoid_period_24() {
        let x: Vec<f64> = (0..96)
            .map(|t| (2.0 * PI * t as f64 / 24.0).sin())
            .collect();
        let rep = Tensor::constant(&[96, 1], x).unwrap();
        let s = top_k_periods(&rep, 1).unwrap();
        assert_eq!(s.entries[0].frequency, 4);
        assert_eq!(s.entries[0].period, 24);
        assert!((s.entries[0].amplitude - 48.0).abs() < 1e-9);
    }

    #[test]
    fn period_uses_ceiling() {
        // f = 5 on L = 24 → p = ceil(4.8) = 5
        let x: Vec<f64> = (0..24)
            .map(|t| (2.0 * PI * 5.0 * t as f64 / 24.0).cos())
            .collect();
        let s = top_k_periods(&Tensor::constant(&[24, 1], x).unwrap(), 1).unwrap();
        assert_eq!((s.entries[0].frequency, s.entries[0].period), (5, 5));
    }
}
