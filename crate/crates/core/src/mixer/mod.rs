//! The MixerBlock and its four mechanisms: multi-resolution time imaging,
//! time-image decomposition by dual-axis attention, multi-scale mixing of
//! seasonal/trend images, and amplitude-weighted multi-resolution mixing.

mod block;
mod decompose;
mod image;
mod resolution;
mod scale_mixing;

pub use block::MixerBlock;
pub use decompose::{AttentionAxis, AxisAttention, DecomposedImage, TimeImageDecomposition};
pub use image::{fold_to_image, mrti, unfold_image, MultiScaleSeries, TimeImage};
pub use resolution::{multi_resolution_mix, resolution_weights};
pub use scale_mixing::{merge_and_unfold, ScaleMixing};
