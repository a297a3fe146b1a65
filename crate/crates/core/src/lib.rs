//! Lightweight deepfake detection on face-region patches: a three-hop
//! channel-wise Saab cascade, per-channel spatial PCA with boosted soft
//! classifiers, and a multi-region, multi-frame boosted ensemble.

pub mod cli;
pub mod config;
pub mod cwsaab;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod gboost;
pub mod manifest;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod pten;
pub mod region;
pub mod store;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
