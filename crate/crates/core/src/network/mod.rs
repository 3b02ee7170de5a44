//! The two-branch dehazing model: a CNN branch for local detail, a windowed
//! attention branch for global context, per-stage guidance between them and a
//! skip-connected convolutional decoder.

pub mod checkpoint;
mod config;
mod layers;
mod model;
mod params;

pub use config::{ModelConfig, Variant};
pub use layers::{
    attention_core, channel_attention, cnn_layer, cpa, fuse_and_guide, pixel_attention, rescale_norm,
    transformer_layer, window_attention, window_merge, window_partition, NormVars, RescaleNormParams, WindowLayout,
};
pub use model::{count_params_macs, model_forward, predict};
pub use params::{init_params, param_specs, Bound, Init, ParamSpec, ParamStore};
