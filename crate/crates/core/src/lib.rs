//! Single-pass normalized-cut instance masks from self-supervised patch
//! features.
//!
//! The per-image chain is
//! [`feature_io`] → [`affinity`] → [`spectral`] → [`saliency`] → [`instances`],
//! and [`annotations`] / [`evaluation`] handle COCO-style output and scoring.
//! [`pipeline`] strings the stages together.

pub mod affinity;
pub mod annotations;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod feature_io;
pub mod instances;
pub mod pipeline;
pub mod saliency;
pub mod spectral;
pub mod synthetic;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use feature_io::{load_feature_grid, save_feature_grid, FeatureGrid, GridMetadata};
pub use pipeline::{run_image, ImageResult};
