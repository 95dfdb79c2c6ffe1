//! Learnable layers and optimization on top of [`crate::tensor`].

mod adam;
mod attention;
mod linear;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{scaled_dot_product_attention, AttentionOutput, MultiHeadAttention};
pub use linear::Linear;
pub use params::{init_params, InitScheme, ParamStore};
