//! Speaker-verification toolkit: log mel filterbank front end, TDNN
//! embedding extractor with statistics pooling, two-covariance PLDA with
//! unsupervised adaptation, attribute-restricted trial generation and
//! EER/DET evaluation.

pub mod config;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod features;
pub mod manifest;
pub mod matrix;
pub mod plda;
pub mod rng;
pub mod synth;
pub mod trials;
pub mod types;

pub use error::{Error, ErrorClass, Result};
pub use manifest::Manifest;
pub use matrix::{Embedding, EmbeddingSet, FeatureMatrix};
pub use types::{Gender, Grade, L1Label, MergedGrade, RecordingRecord, Section, SpeakerRecord};
