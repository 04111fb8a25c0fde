use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penmark::{CleaningBackend, PenPixelRules, PenThresholds};
use crate::report::ReportParams;
use crate::segment::SegBackendConfig;
use crate::selector::Weights;
use crate::tissue::TissueMaskParams;

/// Every tunable of a run. Loaded from JSON; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tile_w: u32,
    pub tile_h: u32,
    /// Neighbor overlap as a fraction of the tile side.
    pub overlap: f64,
    /// Target thumbnail side, clamped to the slide size.
    pub thumbnail_size: u32,
    pub tissue: TissueMaskParams,
    pub pen: PenThresholds,
    pub pen_rules: PenPixelRules,
    pub cleaning: CleaningBackend,
    pub segmentation: SegBackendConfig,
    pub weights: Weights,
    /// Sets whose cheapest member costs more than this get no tile.
    pub c_max: f64,
    pub report: ReportParams,
    pub seed: u64,
    pub save_tiles: bool,
    pub save_masks: bool,
    /// Thread count; never affects output, so it is not recorded.
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tile_w: 270,
            tile_h: 270,
            overlap: 0.25,
            thumbnail_size: 5000,
            tissue: TissueMaskParams::default(),
            pen: PenThresholds::default(),
            pen_rules: PenPixelRules::default(),
            cleaning: CleaningBackend::default(),
            segmentation: SegBackendConfig::default(),
            weights: Weights::default(),
            c_max: 1.0,
            report: ReportParams::default(),
            seed: 0,
            save_tiles: false,
            save_masks: false,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_w == 0 || self.tile_h == 0 {
            return Err(Error::InvalidConfig("tile size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!("overlap must be in [0,1), got {}", self.overlap)));
        }
        if self.thumbnail_size == 0 {
            return Err(Error::InvalidConfig("thumbnail size must be positive".into()));
        }
        if self.c_max.is_nan() {
            return Err(Error::InvalidConfig("c_max is NaN".into()));
        }
        if self.report.mosaic_downsample == Some(0) {
            return Err(Error::InvalidConfig("mosaic downsample must be positive".into()));
        }
        let b = &self.report.baseline;
        if !(b.t_bg > 0.0 && b.t_art > 0.0) {
            return Err(Error::InvalidConfig("baseline thresholds must be positive".into()));
        }
        self.pen.validate()?;
        self.weights.validate()
    }
}
