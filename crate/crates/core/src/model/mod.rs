//! Full model: multi-scale generation, channel mixing at the coarsest scale,
//! shared embedding, a stack of mixer blocks and per-scale output heads.

mod config;
mod head;

pub use config::{EnsembleMode, ModelConfig, TaskKind};
pub use head::{ensemble_heads, Ensemble, TaskHead};

use crate::mixer::{MixerBlock, MultiScaleSeries};
use crate::nn::{InitScheme, Linear, MultiHeadAttention, ParamStore};
use crate::spectral::PeriodSpectrum;
use crate::tensor::{concat, Tensor};
use crate::{Error, Result};

const REVIN_EPS: f64 = 1e-5;

fn batched(x: &Tensor) -> Result<(Tensor, bool)> {
    match *x.shape() {
        [t, c] => Ok((x.reshape(&[1, t, c])?, false)),
        [_, _, _] => Ok((x.clone(), true)),
        _ => Err(Error::Invalid(format!(
            "expected [T, C] or [B, T, C], got {:?}",
            x.shape()
        ))),
    }
}

fn unbatch(x: Tensor, was_batched: bool) -> Result<Tensor> {
    if was_batched {
        Ok(x)
    } else {
        let s = x.shape()[1..].to_vec();
        Ok(x.reshape(&s)?)
    }
}

/// One stride-2 step with a depthwise `[3, C]` kernel; the series is padded
/// by repeating its first and last steps so constants stay constant.
fn downsample_step(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let &[b, len, c] = x.shape() else {
        unreachable!()
    };
    let n = len / 2;
    let padded = concat(
        &[
            x.slice_axis(1, 0, 1)?,
            x.clone(),
            x.slice_axis(1, len - 1, len)?,
        ],
        1,
    )?;
    let mut out: Option<Tensor> = None;
    for j in 0..3 {
        let tap = padded
            .slice_axis(1, j, j + 2 * n)?
            .reshape(&[b, n, 2, c])?
            .slice_axis(2, 0, 1)?
            .reshape(&[b, n, c])?
            .mul(&kernel.slice_axis(0, j, j + 1)?)?;
        out = Some(match out {
            None => tap,
            Some(acc) => acc.add(&tap)?,
        });
    }
    Ok(out.expect("three taps"))
}

/// `x_m = conv1d(x_{m-1}, stride 2, k = 3)` for `m = 1..=M`, one kernel per step.
pub fn downsample_multiscale(x0: &Tensor, kernels: &[Tensor]) -> Result<MultiScaleSeries> {
    let (x, was_batched) = batched(x0)?;
    let (t, c) = (x.shape()[1], x.shape()[2]);
    let m = kernels.len();
    if m >= usize::BITS as usize || t >> m == 0 {
        return Err(Error::Invalid(format!(
            "series of length {t} too short for {m} scales"
        )));
    }
    if let Some(k) = kernels.iter().find(|k| k.shape() != [3, c]) {
        return Err(Error::Invalid(format!(
            "downsample kernel {:?}, expected [3, {c}]",
            k.shape()
        )));
    }
    let mut levels = vec![x];
    for k in kernels {
        let next = downsample_step(levels.last().expect("nonempty"), k)?;
        levels.push(next);
    }
    let levels = levels
        .into_iter()
        .map(|l| unbatch(l, was_batched))
        .collect::<Result<Vec<_>>>()?;
    MultiScaleSeries::new(levels)
}

/// `[len, d]` table: `sin(t/10000^(2i/d))` on even features, `cos` on odd.
pub fn sinusoidal_positions(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for t in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((i - i % 2) as f64 / d as f64);
            let angle = t as f64 / rate;
            pe[t * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Variate-wise attention: tokens are the C variables, each a length-`L_M` vector.
#[derive(Clone, Debug)]
pub struct ChannelMixer {
    pub attention: MultiHeadAttention,
    pub residual: bool,
}

impl ChannelMixer {
    pub fn new(
        store: &mut ParamStore,
        coarse_len: usize,
        d_model: usize,
        heads: usize,
        residual: bool,
    ) -> Result<Self> {
        Ok(ChannelMixer {
            attention: MultiHeadAttention::new(
                store,
                "channel_mix",
                coarse_len,
                d_model,
                coarse_len,
                heads,
            )?,
            residual,
        })
    }

    /// `[L_M, C]` or `[B, L_M, C]` → same shape.
    pub fn forward(&self, x_m: &Tensor) -> Result<Tensor> {
        let (x, was_batched) = batched(x_m)?;
        let tokens = x.permute(&[0, 2, 1])?;
        let mixed = self
            .attention
            .forward(&tokens, &tokens, &tokens)?
            .output
            .permute(&[0, 2, 1])?;
        let out = if self.residual { x.add(&mixed)? } else { mixed };
        unbatch(out, was_batched)
    }
}

/// Shared per-time-step linear `C → d_model` with optional positional terms.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub linear: Linear,
    pub positional: bool,
}

impl Embedding {
    pub fn forward(&self, levels: &MultiScaleSeries) -> Result<MultiScaleSeries> {
        let d = self.linear.out_dim();
        let out = levels
            .levels
            .iter()
            .map(|x| {
                let e = self.linear.forward(x)?;
                if !self.positional {
                    return Ok(e);
                }
                let len = x.shape()[x.rank() - 2];
                Ok(e.add(&Tensor::constant(&[len, d], sinusoidal_positions(len, d))?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        MultiScaleSeries::new(out)
    }
}

/// Per-window, per-channel statistics, shaped `[B, 1, C]`.
#[derive(Clone, Debug)]
pub struct WindowStats {
    pub mean: Tensor,
    pub std: Tensor,
}

impl WindowStats {
    /// `observed[b·T + t]` selects the steps that contribute; all steps when `None`.
    pub fn compute(x: &Tensor, observed: Option<&[bool]>) -> Result<WindowStats> {
        let &[b, t, c] = x.shape() else {
            return Err(Error::Invalid(format!(
                "window stats expect [B, T, C], got {:?}",
                x.shape()
            )));
        };
        let data = x.data();
        let (mut mean, mut std) = (vec![0.0; b * c], vec![1.0; b * c]);
        for bi in 0..b {
            let keep = |ti: usize| observed.is_none_or(|o| o[bi * t + ti]);
            let n = (0..t).filter(|&ti| keep(ti)).count();
            if n == 0 {
                continue;
            }
            for ci in 0..c {
                let vals = (0..t)
                    .filter(|&ti| keep(ti))
                    .map(|ti| data[(bi * t + ti) * c + ci]);
                let mu = vals.clone().sum::<f64>() / n as f64;
                let var = vals.map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                mean[bi * c + ci] = mu;
                std[bi * c + ci] = (var + REVIN_EPS).sqrt();
            }
        }
        Ok(WindowStats {
            mean: Tensor::constant(&[b, 1, c], mean)?,
            std: Tensor::constant(&[b, 1, c], std)?,
        })
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.sub(&self.mean)?.div(&self.std)?)
    }

    pub fn denormalize(&self, y: &Tensor) -> Result<Tensor> {
        Ok(y.mul(&self.std)?.add(&self.mean)?)
    }
}

/// Everything the encoder produced for one input batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Ensemble output, denormalized when instance normalization is on.
    pub output: Tensor,
    pub reps: MultiScaleSeries,
    /// Output of each block, in order.
    pub layer_trace: Vec<MultiScaleSeries>,
    /// Period spectrum selected by each block.
    pub spectra: Vec<PeriodSpectrum>,
}

#[derive(Clone, Debug)]
pub struct MultiScaleMixer {
    pub config: ModelConfig,
    params: ParamStore,
    pub downsample: Vec<Tensor>,
    pub channel_mixer: ChannelMixer,
    pub embedding: Embedding,
    pub blocks: Vec<MixerBlock>,
    pub heads: Vec<TaskHead>,
    pub ensemble: Ensemble,
}

impl MultiScaleMixer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let c = config.channels;
        let d = config.d_model;
        let downsample = (1..=config.scales)
            .map(|m| store.create(&format!("downsample.{m}.weight"), &[3, c], InitScheme::Ones))
            .collect::<Result<Vec<_>>>()?;
        for k in &downsample {
            k.set_data(&vec![1.0 / 3.0; 3 * c])?;
        }
        let lengths = config.scale_lengths();
        let coarse = *lengths.last().expect("at least one scale");
        let channel_mixer = ChannelMixer::new(
            &mut store,
            coarse,
            d,
            config.heads,
            config.channel_mix_residual,
        )?;
        let embedding = Embedding {
            linear: Linear::new(&mut store, "embed", c, d)?,
            positional: config.positional,
        };
        let blocks = (0..config.layers)
            .map(|l| {
                MixerBlock::new(
                    &mut store,
                    &format!("block.{l}"),
                    d,
                    config.heads,
                    config.qkv_kernel,
                    config.top_k,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let heads = lengths
            .iter()
            .enumerate()
            .map(|(m, &len)| {
                let name = format!("head.{m}");
                match config.task {
                    TaskKind::Forecast { horizon } => {
                        TaskHead::sequence(&mut store, &name, len, horizon, d, c)
                    }
                    TaskKind::Imputation | TaskKind::AnomalyDetection => {
                        TaskHead::sequence(&mut store, &name, len, config.seq_len, d, c)
                    }
                    TaskKind::Classification { n_classes } => {
                        TaskHead::pooled(&mut store, &name, d, n_classes)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let ensemble = Ensemble::new(&mut store, config.ensemble, lengths.len())?;
        Ok(MultiScaleMixer {
            config,
            params: store,
            downsample,
            channel_mixer,
            embedding,
            blocks,
            heads,
            ensemble,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn uses_revin(&self) -> bool {
        self.config.revin
            && matches!(
                self.config.task,
                TaskKind::Forecast { .. } | TaskKind::Imputation
            )
    }

    /// Multi-scale encoding of an already-normalized batch `[B, T, C]`.
    pub fn encode(
        &self,
        x: &Tensor,
    ) -> Result<(MultiScaleSeries, Vec<MultiScaleSeries>, Vec<PeriodSpectrum>)> {
        let mut levels = downsample_multiscale(x, &self.downsample)?;
        let last = levels.levels.len() - 1;
        levels.levels[last] = self.channel_mixer.forward(&levels.levels[last])?;
        let mut reps = self.embedding.forward(&levels)?;
        let mut trace = Vec::with_capacity(self.blocks.len());
        let mut spectra = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, spectrum) = block.forward(&reps)?;
            trace.push(next.clone());
            spectra.push(spectrum);
            reps = next;
        }
        Ok((reps, trace, spectra))
    }

    /// `x` is `[T, C]` or `[B, T, C]`. For imputation, `observed[b·T + t]`
    /// marks the visible time steps; hidden steps are zeroed before encoding.
    pub fn forward(&self, x: &Tensor, observed: Option<&[bool]>) -> Result<ForwardOutput> {
        let (x, was_batched) = batched(x)?;
        let &[b, t, c] = x.shape() else {
            unreachable!()
        };
        if t != self.config.seq_len || c != self.config.channels {
            return Err(Error::Invalid(format!(
                "input [{t}, {c}] does not match configured [{}, {}]",
                self.config.seq_len, self.config.channels
            )));
        }
        if let Some(o) = observed {
            if o.len() != b * t {
                return Err(Error::Invalid(format!(
                    "mask has {} entries, expected {}",
                    o.len(),
                    b * t
                )));
            }
        }
        let stats = if self.uses_revin() {
            Some(WindowStats::compute(&x, observed)?)
        } else {
            None
        };
        let mut input = match &stats {
            Some(s) => s.normalize(&x)?,
            None => x,
        };
        if let Some(o) = observed {
            let keep = o.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            input = input.mul(&Tensor::constant(&[b, t, 1], keep)?)?;
        }
        let (reps, layer_trace, spectra) = self.encode(&input)?;
        let mut output = ensemble_heads(&reps, &self.heads, &self.ensemble)?;
        if let (Some(s), false) = (
            &stats,
            matches!(self.config.task, TaskKind::Classification { .. }),
        ) {
            output = s.denormalize(&output)?;
        }
        Ok(ForwardOutput {
            output: unbatch(output, was_batched)?,
            reps,
            layer_trace,
            spectra,
        })
    }

    pub fn predict(&self, x: &Tensor, observed: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward(x, observed)?.output)
    }
}
