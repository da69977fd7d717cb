//! Quantization vectors: weight-space displacements between matched
//! full-precision and quantization-aware checkpoints, and the tooling to
//! extract them, patch receivers with them, and measure the effect under
//! 3-bit symmetric per-channel post-training quantization.

pub mod error;
pub mod format;
pub mod geometry;
pub mod quantizer;
pub mod qv;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Incompatibility, Result};
pub use format::{load_checkpoint, save_checkpoint};
pub use quantizer::{
    channel_scales, fake_quantize_checkpoint, fake_quantize_tensor, quantize_tensor, ste_apply,
    QuantSpec, QuantizedView, SteApplied,
};
pub use qv::{
    extract_qv, extract_qv_with, patch, qv_cosine, qv_norm, ExtractOptions, Provenance,
    QuantizationVector,
};
pub use tensor::{checkpoint_axpy, checkpoint_diff, Checkpoint, NameFilter, Tensor, TensorMap};
