//! Slide access: pyramidal TIFF-family containers and flat PNG/PPM rasters.
//!
//! A [`SlideImage`] exposes a level table and serves arbitrary RGB regions
//! addressed in level-0 coordinates. Anything outside the slide reads as
//! white, which downstream stages treat as background. Reads are pure: the
//! same [`RegionSpec`] always yields the same bytes, from any thread.

mod resample;
mod tiff;

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{RasterRgb, WHITE};

pub use resample::area_resample;

/// One pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelInfo {
    pub width: u32,
    pub height: u32,
    /// Downsample relative to level 0; exactly 1.0 for level 0.
    pub downsample: f64,
}

/// A rectangle to read. `x`/`y` are level-0 coordinates and may be negative;
/// `width`/`height` are output pixels at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegionSpec {
    pub level: usize,
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl RegionSpec {
    pub fn level0(x: i64, y: i64, width: u32, height: u32) -> Self {
        Self {
            level: 0,
            x,
            y,
            width,
            height,
        }
    }
}

enum Source {
    Flat(RasterRgb),
    Tiff(tiff::TiffSource),
}

/// Handle to an opened slide. Cheap to share across threads by reference.
pub struct SlideImage {
    path: PathBuf,
    levels: Vec<LevelInfo>,
    mpp: Option<f64>,
    source: Source,
}

impl std::fmt::Debug for SlideImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlideImage")
            .field("path", &self.path)
            .field("levels", &self.levels)
            .field("mpp", &self.mpp)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Tiff,
    Flat,
}

fn sniff(path: &Path) -> Result<Container> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    let n = read_up_to(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
    let magic = &magic[..n];
    if magic.starts_with(b"II*\0")
        || magic.starts_with(b"MM\0*")
        || magic.starts_with(b"II+\0")
        || magic.starts_with(b"MM\0+")
    {
        Ok(Container::Tiff)
    } else if magic.starts_with(b"\x89PNG") || magic.starts_with(b"P6") {
        Ok(Container::Flat)
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{}: container not recognized",
            path.display()
        )))
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

/// Opens a slide. Flat rasters become a single-level pyramid.
pub fn open_slide(path: impl AsRef<Path>) -> Result<SlideImage> {
    let path = path.as_ref();
    match sniff(path)? {
        Container::Flat => {
            let img = image::ImageReader::open(path)
                .map_err(|e| Error::io(path, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(path, e))?
                .decode()
                .map_err(|e| Error::CorruptPyramid(format!("{}: {e}", path.display())))?
                .into_rgb8();
            let (w, h) = img.dimensions();
            let raster = RasterRgb::new(w, h, img.into_raw())?;
            Ok(SlideImage::from_raster(path, raster))
        }
        Container::Tiff => {
            let (source, levels, mpp) = tiff::TiffSource::open(path)?;
            validate_levels(&levels)?;
            Ok(SlideImage {
                path: path.to_path_buf(),
                levels,
                mpp,
                source: Source::Tiff(source),
            })
        }
    }
}

/// Checks that every level reconstructs level 0 to within one level pixel.
fn validate_levels(levels: &[LevelInfo]) -> Result<()> {
    let Some(base) = levels.first() else {
        return Err(Error::CorruptPyramid("no image levels".into()));
    };
    if base.width == 0 || base.height == 0 {
        return Err(Error::CorruptPyramid("level 0 has zero size".into()));
    }
    for pair in levels.windows(2) {
        if pair[1].downsample <= pair[0].downsample {
            return Err(Error::CorruptPyramid(format!(
                "downsample factors not ascending: {} then {}",
                pair[0].downsample, pair[1].downsample
            )));
        }
    }
    for (i, l) in levels.iter().enumerate() {
        let ew = (base.width as f64 / l.downsample).round();
        let eh = (base.height as f64 / l.downsample).round();
        if (ew - l.width as f64).abs() > 1.0 || (eh - l.height as f64).abs() > 1.0 {
            return Err(Error::CorruptPyramid(format!(
                "level {i} is {}x{} but factor {} implies {ew}x{eh}",
                l.width, l.height, l.downsample
            )));
        }
    }
    Ok(())
}

impl SlideImage {
    /// Wraps an in-memory raster as a single-level slide.
    pub fn from_raster(path: impl Into<PathBuf>, raster: RasterRgb) -> SlideImage {
        SlideImage {
            path: path.into(),
            levels: vec![LevelInfo {
                width: raster.width(),
                height: raster.height(),
                downsample: 1.0,
            }],
            mpp: None,
            source: Source::Flat(raster),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn width0(&self) -> u32 {
        self.levels[0].width
    }

    pub fn height0(&self) -> u32 {
        self.levels[0].height
    }

    pub fn levels(&self) -> &[LevelInfo] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn mpp(&self) -> Option<f64> {
        self.mpp
    }

    /// Reads a region; pixels outside the slide are white.
    pub fn read_region(&self, spec: &RegionSpec) -> Result<RasterRgb> {
        let Some(level) = self.levels.get(spec.level) else {
            return Err(Error::InvalidLevel {
                level: spec.level,
                count: self.levels.len(),
            });
        };
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "region must be non-empty, got {}x{}",
                spec.width, spec.height
            )));
        }
        let (lx, ly) = if spec.level == 0 {
            (spec.x, spec.y)
        } else {
            (
                (spec.x as f64 / level.downsample).floor() as i64,
                (spec.y as f64 / level.downsample).floor() as i64,
            )
        };
        self.read_level_rect(spec.level, lx, ly, spec.width, spec.height)
    }

    /// Reads a rectangle in the coordinate frame of `level` itself.
    fn read_level_rect(&self, level: usize, x: i64, y: i64, w: u32, h: u32) -> Result<RasterRgb> {
        match &self.source {
            Source::Flat(raster) => Ok(raster.crop(x, y, w, h)),
            Source::Tiff(src) => {
                let info = self.levels[level];
                let mut out = RasterRgb::filled(w, h, WHITE);
                src.read_into(level, info, x, y, &mut out)?;
                Ok(out)
            }
        }
    }

    /// Index of the coarsest level whose downsample does not exceed `factor`.
    pub fn best_level_for(&self, factor: f64) -> usize {
        self.levels
            .iter()
            .rposition(|l| l.downsample <= factor + 1e-9)
            .unwrap_or(0)
    }

    /// Area-averaged thumbnail of exactly `target_w`×`target_h`.
    ///
    /// The source is the coarsest level that is still at least as fine as the
    /// target on both axes. Aspect ratio is not preserved. The level is read
    /// in horizontal bands so a full level never has to be resident.
    pub fn thumbnail(&self, target_w: u32, target_h: u32) -> Result<RasterRgb> {
        if target_w == 0 || target_h == 0 {
            return Err(Error::InvalidArgument(format!(
                "thumbnail size must be positive, got {target_w}x{target_h}"
            )));
        }
        let factor = (self.width0() as f64 / target_w as f64)
            .min(self.height0() as f64 / target_h as f64);
        let level = self.best_level_for(factor);
        let info = self.levels[level];
        area_resample(info.width, info.height, target_w, target_h, |y0, rows| {
            self.read_level_rect(level, 0, y0 as i64, info.width, rows)
        })
    }
}

/// Free-function form of [`SlideImage::read_region`].
pub fn read_region(slide: &SlideImage, spec: &RegionSpec) -> Result<RasterRgb> {
    slide.read_region(spec)
}

/// Free-function form of [`SlideImage::thumbnail`].
pub fn thumbnail(slide: &SlideImage, target_w: u32, target_h: u32) -> Result<RasterRgb> {
    slide.thumbnail(target_w, target_h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RasterRgb {
        let mut r = RasterRgb::filled(w, h, WHITE);
        for y in 0..h {
            for x in 0..w {
                r.put(x, y, [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        r
    }

    #[test]
    fn flat_raster_is_single_level() {
        let s = SlideImage::from_raster("mem", gradient(512, 512));
        assert_eq!(s.level_count(), 1);
        assert_eq!(s.levels()[0].downsample, 1.0);
        assert_eq!((s.width0(), s.height0()), (512, 512));
    }

    #[test]
    fn read_inside_is_identity() {
        let src = gradient(300, 200);
        let s = SlideImage::from_raster("mem", src.clone());
        let r = s.read_region(&RegionSpec::level0(0, 0, 300, 200)).unwrap();
        assert_eq!(r, src);
        let r = s.read_region(&RegionSpec::level0(10, 20, 50, 40)).unwrap();
        for y in 0..40 {
            for x in 0..50 {
                assert_eq!(r.get(x, y), src.get(x + 10, y + 20));
            }
        }
    }

    #[test]
    fn read_past_right_edge_pads_white() {
        let s = SlideImage::from_raster("mem", RasterRgb::filled(500, 300, [10, 20, 30]));
        let r = s
            .read_region(&RegionSpec::level0(500 - 10, 0, 270, 270))
            .unwrap();
        assert_eq!((r.width(), r.height()), (270, 270));
        for y in 0..270 {
            for x in 0..270 {
                let expect = if x < 10 { [10, 20, 30] } else { WHITE };
                assert_eq!(r.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn negative_origin_pads_white() {
        let s = SlideImage::from_raster("mem", RasterRgb::filled(100, 100, [0, 0, 0]));
        let r = s.read_region(&RegionSpec::level0(-50, -50, 100, 100)).unwrap();
        assert_eq!(r.get(0, 0), WHITE);
        assert_eq!(r.get(49, 49), WHITE);
        assert_eq!(r.get(50, 50), [0, 0, 0]);
        assert_eq!(r.get(50, 49), WHITE);
    }

    #[test]
    fn invalid_level() {
        let s = SlideImage::from_raster("mem", gradient(8, 8));
        let err = s
            .read_region(&RegionSpec {
                level: 1,
                x: 0,
                y: 0,
                width: 4,
                height: 4,
            })
            .unwrap_err();
        assert!(matches!(err, Error::InvalidLevel { level: 1, count: 1 }));
    }

    #[test]
    fn thumbnail_of_uniform_is_uniform() {
        let s = SlideImage::from_raster("mem", RasterRgb::filled(333, 211, [128, 128, 128]));
        let t = s.thumbnail(50, 70).unwrap();
        assert_eq!((t.width(), t.height()), (50, 70));
        assert!(t.pixels().all(|p| p == [128, 128, 128]));
    }

    #[test]
    fn thumbnail_at_native_size_is_identity() {
        let src = gradient(123, 77);
        let s = SlideImage::from_raster("mem", src.clone());
        assert_eq!(s.thumbnail(123, 77).unwrap(), src);
    }

    #[test]
    fn thumbnail_anisotropic_size() {
        let s = SlideImage::from_raster("mem", RasterRgb::filled(1000, 500, [1, 2, 3]));
        let t = s.thumbnail(500, 500).unwrap();
        assert_eq!((t.width(), t.height()), (500, 500));
    }

    #[test]
    fn checkerboard_2x2_to_1x1_is_mean() {
        let mut r = RasterRgb::filled(2, 2, [0, 0, 0]);
        r.put(1, 0, [255, 100, 7]);
        r.put(0, 1, [255, 100, 7]);
        let s = SlideImage::from_raster("mem", r.clone());
        let t = s.thumbnail(1, 1).unwrap();
        // Brute-force area average, rounded half up.
        let mut expect = [0u8; 3];
        for (c, e) in expect.iter_mut().enumerate() {
            let sum: u32 = r.pixels().map(|p| p[c] as u32).sum();
            *e = ((2 * sum + 4) / 8) as u8;
        }
        assert_eq!(t.get(0, 0), expect);
        assert_eq!(expect, [128, 50, 4]);
    }

    #[test]
    fn unsupported_container() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mrxs");
        std::fs::write(&p, b"not a slide at all").unwrap();
        assert!(matches!(open_slide(&p), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ppm_opens_as_single_level() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("flat.ppm");
        let mut bytes = b"P6\n512 512\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n([200u8, 100, 50], 512 * 512).flatten());
        std::fs::write(&p, bytes).unwrap();
        let s = open_slide(&p).unwrap();
        assert_eq!(s.levels(), &[LevelInfo { width: 512, height: 512, downsample: 1.0 }]);
        let r = s.read_region(&RegionSpec::level0(0, 0, 2, 2)).unwrap();
        assert_eq!(r.get(1, 1), [200, 100, 50]);
    }

    #[test]
    fn level_validation_rejects_inconsistent_table() {
        let ok = [
            LevelInfo { width: 8192, height: 6144, downsample: 1.0 },
            LevelInfo { width: 4096, height: 3072, downsample: 2.0 },
        ];
        validate_levels(&ok).unwrap();
        let bad = [
            LevelInfo { width: 8192, height: 6144, downsample: 1.0 },
            LevelInfo { width: 4096, height: 2000, downsample: 2.0 },
        ];
        assert!(matches!(validate_levels(&bad), Err(Error::CorruptPyramid(_))));
    }
}
