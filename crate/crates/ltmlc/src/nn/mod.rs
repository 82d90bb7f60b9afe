//! Minimal f64 neural-network building blocks with explicit backward passes.

pub mod layers;
pub mod params;

pub use layers::{
    conv_out_side, AttentionLayer, AttnCache, ConvCache, ConvLayer, FfnCache, FfnLayer,
    LayerNormLayer, LinearLayer, LnCache,
};
pub use params::{seg_slice_mut, view2_mut, ParamLayout, ParamStore, SegId, Segment};
