//! Two-stage multiple-instance self-training for weakly supervised video
//! anomaly detection.
//!
//! Stage I trains a clip scorer ([`milgen`]) from video-level labels and turns
//! its scores into soft clip labels ([`pseudolabel`]). Stage II fine-tunes a
//! convolutional encoder with a self-guided attention module ([`encoder`]) on
//! those labels. [`evaluation`] computes frame-level AUC, false-alarm rate and
//! score gap.

pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod milgen;
pub mod nn;
pub mod pseudolabel;
pub mod sampling;

pub use config::{load_config, HyperParams};
pub use error::{ErrorCategory, MistError, Result};
