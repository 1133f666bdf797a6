//! Per-pixel MLP kernel with hand-written reverse mode.
//!
//! A full prediction map is the same MLP evaluated on every pixel's patch
//! features, which makes the network a fully convolutional head with a
//! `P x P` receptive field.

mod adam;
pub mod checkpoint;
mod mlp;
mod patch;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use mlp::{init_params, Architecture, Gradients, Layer, Mlp, Trace};
pub use patch::{
    extract_patch, extract_patch_transformed, FeaturePatch, GridTransform, ObsFeatures, CHANNELS,
    DEFAULT_PATCH, HEIGHT_SCALE,
};
