//! Transformer building blocks: multi-head attention, the encoder layer and
//! the slot reviser layer.

mod attention;
mod layers;
mod positional;

pub use attention::{attend, attention, causal_mask, Attended, AttentionParams, AttnMask};
pub use layers::{
    EncoderLayer, FeedForwardParams, LayerConfig, LayerNormParams, ReviserLayer,
};
pub use positional::positional_encoding;

#[cfg(test)]
mod tests;
