//! Speaker-verification toolkit: audio loading and resampling, corpus
//! manifests and trial lists, noise and reverberation augmentation,
//! embedding scoring with s-norm and EER, and triplet-loss adapter training.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod audio;
pub mod augment;
pub mod cli;
pub mod convolve;
pub mod corpus;
pub mod scoring;
pub mod seed;
pub mod trainer;

pub use audio::{load_audio, resample, AudioBuffer, AudioError, PIPELINE_RATE_HZ};
pub use augment::{AugmentPolicy, Augmenter, NoiseBank};
pub use corpus::{Manifest, Split, TrialLabel, TrialPair, UtteranceRecord};
pub use scoring::{compute_eer, cosine_score, EmbeddingArchive};
pub use trainer::{AdapterModel, TrainerConfig};
