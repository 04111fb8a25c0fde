//! Per-pixel tile segmentation into background, qualified tissue, fold and
//! blur, through one of three interchangeable backends.

mod heuristic;
mod postprocess;
pub mod protocol;
mod sidecar;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Plane, RasterRgb};

pub use heuristic::{heuristic_segment, laplacian, local_variance, rgb_to_hsl, HeuristicParams};
pub use postprocess::close_small_background;
pub use sidecar::SidecarPool;

pub const BACKGROUND: u8 = 0;
pub const QUALIFIED: u8 = 1;
pub const FOLD: u8 = 2;
pub const BLUR: u8 = 3;
pub const NUM_LABELS: usize = 4;

/// Background holes below this many pixels are closed after segmentation.
pub const MIN_HOLE_AREA: usize = 25;

/// One label byte per pixel, each in 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask(Plane);

impl LabelMask {
    pub fn from_plane(plane: Plane) -> Result<Self> {
        if let Some(i) = plane.data().iter().position(|&v| v as usize >= NUM_LABELS) {
            let w = plane.width() as usize;
            return Err(Error::MaskShapeMismatch(format!(
                "label {} at ({}, {}) outside 0..=3",
                plane.data()[i],
                i % w,
                i / w
            )));
        }
        Ok(LabelMask(plane))
    }

    pub fn filled(width: u32, height: u32, label: u8) -> Self {
        assert!((label as usize) < NUM_LABELS);
        LabelMask(Plane::filled(width, height, label))
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    pub fn labels(&self) -> &[u8] {
        self.0.data()
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.0.get(x, y)
    }

    /// Pixel count per label, indexed by label value.
    pub fn counts(&self) -> [u64; NUM_LABELS] {
        let mut c = [0u64; NUM_LABELS];
        for &v in self.labels() {
            c[v as usize] += 1;
        }
        c
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels().iter().filter(|&&v| v == label).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.0.save_png(path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        LabelMask::from_plane(Plane::load_png(path)?)
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_processes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SegBackendConfig {
    Heuristic {
        #[serde(default)]
        params: HeuristicParams,
    },
    /// Precomputed masks named `<tile_id>.png`.
    Maskdir { dir: PathBuf },
    /// External process speaking the framed protocol on stdin/stdout.
    Sidecar {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_processes")]
        processes: usize,
    },
}

impl Default for SegBackendConfig {
    fn default() -> Self {
        SegBackendConfig::Heuristic {
            params: HeuristicParams::default(),
        }
    }
}

/// A configured backend, ready to segment tiles from many threads.
pub enum Segmenter {
    Heuristic(HeuristicParams),
    Maskdir(PathBuf),
    Sidecar(SidecarPool),
}

impl Segmenter {
    pub fn from_config(cfg: &SegBackendConfig) -> Result<Segmenter> {
        Ok(match cfg {
            SegBackendConfig::Heuristic { params } => Segmenter::Heuristic(*params),
            SegBackendConfig::Maskdir { dir } => Segmenter::Maskdir(dir.clone()),
            SegBackendConfig::Sidecar {
                command,
                timeout_secs,
                processes,
            } => {
                if !(*timeout_secs > 0.0) {
                    return Err(Error::InvalidConfig("sidecar timeout must be positive".into()));
                }
                Segmenter::Sidecar(SidecarPool::new(
                    command,
                    (*processes).max(1),
                    std::time::Duration::from_secs_f64(*timeout_secs),
                ))
            }
        })
    }

    /// Raw backend output, before hole closing.
    pub fn segment_raw(&self, tile: &RasterRgb, tile_id: u64) -> Result<LabelMask> {
        let mask = match self {
            Segmenter::Heuristic(p) => heuristic_segment(tile, p),
            Segmenter::Maskdir(dir) => load_mask(dir, tile_id)?,
            Segmenter::Sidecar(pool) => pool.segment(tile, tile_id)?,
        };
        if (mask.width(), mask.height()) != (tile.width(), tile.height()) {
            return Err(Error::MaskShapeMismatch(format!(
                "tile {tile_id}: mask is {}x{}, tile is {}x{}",
                mask.width(),
                mask.height(),
                tile.width(),
                tile.height()
            )));
        }
        Ok(mask)
    }

    pub fn segment(&self, tile: &RasterRgb, tile_id: u64) -> Result<LabelMask> {
        Ok(close_small_background(&self.segment_raw(tile, tile_id)?, MIN_HOLE_AREA))
    }
}

pub fn mask_path(dir: &Path, tile_id: u64) -> PathBuf {
    dir.join(format!("{tile_id}.png"))
}

fn load_mask(dir: &Path, tile_id: u64) -> Result<LabelMask> {
    let path = mask_path(dir, tile_id);
    if !path.is_file() {
        return Err(Error::MaskMissing { tile_id, path });
    }
    LabelMask::load_png(&path).map_err(|e| match e {
        Error::MaskShapeMismatch(m) => Error::MaskShapeMismatch(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// One-shot convenience: builds the backend, segments, closes small holes.
pub fn segment_tile(tile: &RasterRgb, cfg: &SegBackendConfig, tile_id: u64) -> Result<LabelMask> {
    Segmenter::from_config(cfg)?.segment(tile, tile_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_tile_is_all_background() {
        let m = segment_tile(&RasterRgb::filled(16, 16, [255; 3]), &SegBackendConfig::default(), 0).unwrap();
        assert_eq!(m.count(BACKGROUND), 256);
    }

    #[test]
    fn rejects_label_four() {
        let mut p = Plane::filled(3, 3, 1);
        p.set(2, 1, 4);
        assert!(matches!(LabelMask::from_plane(p), Err(Error::MaskShapeMismatch(_))));
    }

    #[test]
    fn maskdir_missing_names_tile() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SegBackendConfig::Maskdir {
            dir: dir.path().to_path_buf(),
        };
        match segment_tile(&RasterRgb::filled(4, 4, [0; 3]), &cfg, 42) {
            Err(Error::MaskMissing { tile_id: 42, path }) => assert!(path.ends_with("42.png")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn maskdir_validates_values_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Plane::filled(4, 4, 1);
        p.set(0, 0, 4);
        p.save_png(&mask_path(dir.path(), 7)).unwrap();
        Plane::filled(3, 4, 1).save_png(&mask_path(dir.path(), 8)).unwrap();
        let cfg = SegBackendConfig::Maskdir {
            dir: dir.path().to_path_buf(),
        };
        let tile = RasterRgb::filled(4, 4, [0; 3]);
        assert!(matches!(segment_tile(&tile, &cfg, 7), Err(Error::MaskShapeMismatch(_))));
        assert!(matches!(segment_tile(&tile, &cfg, 8), Err(Error::MaskShapeMismatch(_))));
    }

    #[test]
    fn config_json_forms() {
        let c: SegBackendConfig = serde_json::from_str(r#"{"kind":"maskdir","dir":"m"}"#).unwrap();
        assert_eq!(c, SegBackendConfig::Maskdir { dir: "m".into() });
        let c: SegBackendConfig = serde_json::from_str(r#"{"kind":"sidecar","command":"x"}"#).unwrap();
        assert_eq!(
            c,
            SegBackendConfig::Sidecar {
                command: "x".into(),
                timeout_secs: 30.0,
                processes: 1
            }
        );
        assert!(serde_json::from_str::<SegBackendConfig>(r#"{"kind":"heuristic","bogus":1}"#).is_err());
    }
}
