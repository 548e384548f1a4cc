//! Block-structured image encoders.
//!
//! [`ImageEncoder`] is the inference-side abstraction the gallery and the
//! evaluation harness depend on. [`VitEncoder`] is the shipped trainable
//! implementation: patch embedding, a stack of pre-norm transformer blocks,
//! mean pooling and a final linear projection. Its parameters live in a flat
//! [`ParamStore`] and are partitioned into a pre-block group, one group per
//! transformer block, and a post-block group.

mod config;
mod layers;
mod store;
mod vit;

pub use config::{EncoderConfig, ENCODER_KEYS};
pub use store::{Gradients, Param, ParamId, ParamStore};
pub use vit::{ForwardTrace, VitEncoder};

use crate::error::Result;
use crate::tensor::{EmbeddingVector, ImageTensor};

/// Anything that maps an image to a fixed-length embedding.
pub trait ImageEncoder: Sync {
    fn embed_dim(&self) -> usize;

    /// `(height, width, channels)` the encoder accepts.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Raw, un-normalized embedding.
    fn encode(&self, image: &ImageTensor) -> Result<EmbeddingVector>;
}

/// Parameters of one transformer block. Block 0 is closest to the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterBlock {
    pub block_index: usize,
    pub params: Vec<ParamId>,
}
