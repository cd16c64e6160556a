//! Shadow-consistent correspondence learning for video shadow detection.
//!
//! The crate provides the correspondence objective (shadow guidance,
//! cross-frame best matches, consistency and margin losses with analytical
//! gradients), brightness-shift augmentation, frame-level metrics and the
//! flow-warped temporal stability metric, `.flo` I/O, and a small synthetic
//! benchmark with a trainable toy extractor.

pub mod brightness;
pub mod config;
pub mod correspondence;
pub mod error;
pub mod featbin;
pub mod flo;
pub mod gradcheck;
pub mod guidance;
pub mod image_io;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{BinaryMask, FeatureMap, FlowField, ProbMask, RgbFrame, VideoClip};
