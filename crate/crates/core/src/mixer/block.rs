use super::{
    merge_and_unfold, mrti, multi_resolution_mix, MultiScaleSeries, ScaleMixing,
    TimeImageDecomposition,
};
use crate::nn::{InitScheme, ParamStore};
use crate::spectral::{top_k_periods, PeriodSpectrum};
use crate::tensor::{layer_norm, Tensor};
use crate::Result;

const NORM_EPS: f64 = 1e-5;

/// One mixing layer; decomposition and scale-mixing weights are shared across
/// all scales and resolutions.
#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub decomposition: TimeImageDecomposition,
    pub scale_mixing: ScaleMixing,
    norm_gain: Tensor,
    norm_bias: Tensor,
    pub top_k: usize,
}

impl MixerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        qkv_kernel: usize,
        top_k: usize,
    ) -> Result<Self> {
        Ok(MixerBlock {
            decomposition: TimeImageDecomposition::new(
                store,
                &format!("{name}.tid"),
                d_model,
                heads,
                qkv_kernel,
            )?,
            scale_mixing: ScaleMixing::new(store, &format!("{name}.mcm"), d_model)?,
            norm_gain: store.create(&format!("{name}.norm.gain"), &[d_model], InitScheme::Ones)?,
            norm_bias: store.create(&format!("{name}.norm.bias"), &[d_model], InitScheme::Zeros)?,
            top_k,
        })
    }

    /// Returns the updated levels and the spectrum that drove them.
    pub fn forward(&self, levels: &MultiScaleSeries) -> Result<(MultiScaleSeries, PeriodSpectrum)> {
        let spectrum = top_k_periods(levels.coarsest(), self.top_k)?;
        let images = mrti(levels, &spectrum)?;
        let scales = levels.levels.len();
        // per_scale[m][k]
        let mut per_scale: Vec<Vec<Tensor>> = vec![Vec::with_capacity(spectrum.len()); scales];
        for k in 0..spectrum.len() {
            let (mut seasonal, mut trend) =
                (Vec::with_capacity(scales), Vec::with_capacity(scales));
            for row in &images {
                let parts = self.decomposition.decompose(&row[k])?;
                seasonal.push(parts.seasonal);
                trend.push(parts.trend);
            }
            let seasonal = self.scale_mixing.mix_seasonal_bottom_up(&seasonal)?;
            let trend = self.scale_mixing.mix_trend_top_down(&trend)?;
            for m in 0..scales {
                per_scale[m].push(merge_and_unfold(&seasonal[m], &trend[m], levels.len_at(m))?);
            }
        }
        let amps = spectrum.amplitudes();
        let out = levels
            .levels
            .iter()
            .zip(&per_scale)
            .map(|(x, reps)| {
                let mixed = multi_resolution_mix(reps, &amps)?;
                Ok(layer_norm(
                    &x.add(&mixed)?,
                    &self.norm_gain,
                    &self.norm_bias,
                    NORM_EPS,
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((MultiScaleSeries::new(out)?, spectrum))
    }
}
