//! Interpretable anomaly detection over human-object-interaction vectors.
//!
//! The pipeline models the HOI vectors of normal video frames with PCA
//! followed by a full-covariance Gaussian mixture, scores test frames by
//! their least likely detection, and explains each detection by decomposing
//! its deviation from the closest normal event into a per-feature saliency
//! heatmap. Evaluation helpers (frame-level ROC AUC, explanation mAP), a
//! synthetic stream generator and file-format/CLI plumbing round out the
//! toolkit.

pub mod cli;
pub mod detector;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gmm;
pub mod hoi;
pub mod io;
pub mod pca;
pub mod synth;

pub use error::{Error, Result};
