//! RGB-D semantic segmentation with attention-based modality fusion.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine over
//! rank-4 tensors, the layer vocabulary the network is assembled from, the
//! two-encoder / one-decoder network itself, segmentation metrics (dataset
//! level, per-image CDFs and per-class boundary displacement), the on-disk
//! sample format with a synthetic scene generator, and the fusion ablation.

pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod config;
mod error;
pub mod dataio;
pub mod ini;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use labels::{LabelMap, VOID};
pub use tensor::{Scalar, Shape, Tensor};
