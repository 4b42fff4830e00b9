//! Representation-level face morph evaluation.
//!
//! Templates are morphed with spherical linear interpolation, pairs are
//! picked by non-mated similarity, decision thresholds are calibrated at a
//! fixed false match rate, and attack success is summarized as Morph Attack
//! Potential (MAP) matrices over verification attempts and recognizers. A
//! seeded synthetic recognizer ensemble lets the whole pipeline run without
//! images or neural models; real embeddings enter through BTSF stores.

pub mod calibration;
pub mod config;
pub mod error;
pub mod fmt;
pub mod map;
pub mod morph;
pub mod pairs;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod scoring;
pub mod seed;
pub mod simulator;
pub mod stats;
pub mod store;
pub mod template;
pub mod variants;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use template::{angle_between, cosine_similarity, slerp, MorphWeight};

/// Double-precision template; all analyses compute in this type.
pub type Template64 = template::Template<f64>;
/// Single-precision template, matching the stored representation.
pub type Template32 = template::Template<f32>;
