//! Speaker-attractor multi-center one-class learning for voice anti-spoofing.
//!
//! The crate trains a small embedding network so that bona fide speech
//! clusters around per-speaker attractors while spoofed speech is pushed
//! away from every attractor, and scores test utterances against either an
//! enrolled speaker center or the nearest training attractor.
//!
//! Modules, bottom-up:
//!
//! * [`numerics`]: vectors, normalization, PCA, seeded randomness.
//! * [`dataset`]: corpora, the synthetic generator, partitions, batching.
//! * [`encoder`]: the MLP embedding network, Adam, cosine learning rate.
//! * [`objective`]: SAMO / OC-Softmax / Softmax losses, attractors, scoring.
//! * [`metrics`]: DET points, EER, min t-DCF.
//! * [`checkpoint`]: the text checkpoint format.
//! * [`config`]: `key=value` configuration with documented defaults.
//! * [`trainer`]: the training schedule, evaluation, ablations, seed sweeps.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod objective;
pub mod trainer;

pub use checkpoint::{Checkpoint, Head};
pub use config::Config;
pub use dataset::{
    Corpus, Label, Partition, PartitionName, Partitions, Protocol, SpeakerId, SynthConfig,
    Utterance,
};
pub use error::{Error, Result};
pub use metrics::{Metrics, ScoreSet, TdcfParams};
pub use objective::{AttractorSet, MarginConfig};
pub use trainer::{AblationSetup, Objective, ScoringMode, TrainConfig};
