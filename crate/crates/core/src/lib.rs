//! Metric-learning finetuning of a block-structured image encoder and an
//! embedding-gallery classifier for retail product recognition.
//!
//! The pipeline has two halves:
//!
//! - **Finetuning**: a transformer encoder ([`encoder::VitEncoder`]) is trained
//!   with an additive angular margin head ([`arcface::ArcFaceHead`]), AdamW with
//!   blockwise learning-rate decay ([`lr_schedule`]), on a long-tail balanced
//!   manifest ([`balancing`]).
//! - **Zero-shot classification**: one image per product (plus augmentations) is
//!   enrolled into a [`gallery::Gallery`] and queries are labelled by their
//!   single nearest enrolled embedding. New products need no retraining.

pub mod arcface;
pub mod augment;
pub mod balancing;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod finetune;
pub mod gallery;
pub mod kvconfig;
pub mod lr_schedule;
pub mod manifest;
pub mod optim;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{EmbeddingVector, ImageTensor};
