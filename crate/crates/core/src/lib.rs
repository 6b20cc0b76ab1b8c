//! Deep dilated-convolution sequential recommenders trained with progressive
//! block stacking.
//!
//! A shallow model is trained first, then its residual blocks are copied
//! into a model of twice the depth (adjacent or cross order) which continues
//! training from that warm start. The crate holds hand-written kernels and
//! backward passes, the model, stacking transforms, training schedules,
//! data ingestion, ranking evaluation, and a block-similarity probe.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod probe;
pub mod stacking;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{init_model, ModelConfig, ModelParams};
pub use tensor::{IdTensor, Precision, Scalar, Tensor};
