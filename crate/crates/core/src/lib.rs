//! Content-aware tiling for whole-slide pathology images.
//!
//! The pipeline thumbnails a slide, finds the tissue bounding box, plans a
//! grid of center tiles with four overlapping neighbors each, removes or
//! cleans pen-marked tiles, segments every surviving tile into background,
//! qualified tissue, fold and blur, and keeps the member of each set whose
//! weighted artifact cost is lowest.

// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod metrics;
pub mod morph;
pub mod penmark;
pub mod pipeline;
pub mod raster;
pub mod report;
pub mod review;
pub mod segment;
pub mod selector;
pub mod slide;
pub mod synth;
pub mod tiler;
pub mod tissue;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, RunOutput, RunPlan};
pub use raster::{Plane, RasterRgb};
pub use slide::{open_slide, LevelInfo, RegionSpec, SlideImage};
