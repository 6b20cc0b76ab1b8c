//! Forward and hand-written backward kernels for every layer in the model.
//!
//! Activations are `[batch, len, channels]` tensors stored row-major, so any
//! per-position kernel can treat them as `batch * len` rows of `channels`.

mod activation;
mod conv;
mod embedding;
mod linear;
mod loss;
mod norm;

pub use activation::{relu, relu_backward, scaled_residual_add, scaled_residual_backward, ResidualGrads};
pub use conv::{causal_dilated_conv1d, causal_dilated_conv1d_backward, conv_forward_cached, ConvCache, ConvGrads};
pub use embedding::{embedding_backward, embedding_lookup};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_in_place};
pub use norm::{layer_norm, layer_norm_backward, layer_norm_cached, LayerNormCache, LayerNormGrads, LN_EPS};
