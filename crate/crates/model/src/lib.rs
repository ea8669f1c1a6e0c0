//! A desk-scale multimodal image quality scorer.
//!
//! A frozen patch-transformer encodes the image, a two-layer projector maps
//! its features into the token space of a small causal language model whose
//! attention projections carry low-rank adapters, and a two-layer decoder
//! regresses a score from the hidden state right before the score digits.
//! Training runs in two stages: cross-entropy on a templated score sentence,
//! then squared error on the numeric score.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod lora;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{ModelError, Result};
pub use lora::{lora_forward, LoraAdapter};
pub use model::{
    locate_pre_score_hidden, response_labels, stage1_loss, HarmonyIqa, LlmConfig, Mode, ModelConfig, SequenceLayout,
    Stage, VisionEncoderConfig,
};
pub use tensor::Tensor;
pub use train::{train, EpochRecord, Sample, Stages, TrainConfig, TrainHistory};
pub use vocab::Vocabulary;
