//! Low-resolution tissue detection and the tissue bounding box.

use crate::error::{Error, Result};
use crate::morph::{components8, dilate3x3};
use crate::raster::{Plane, RasterRgb};
use crate::slide::SlideImage;

pub const TISSUE: u8 = 255;

/// Binary mask with values {0, 255}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask(Plane);

impl BinaryMask {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some(v) = plane.data().iter().find(|&&v| v != 0 && v != TISSUE) {
            return Err(Error::ShapeMismatch(format!("binary mask contains value {v}")));
        }
        Ok(Self(plane))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }

    pub fn height(&self) -> u32 {
        self.0.height()
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == TISSUE).count()
    }

    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.0.get(x, y) == TISSUE
    }
}

/// Tissue bounding box in level-0 pixels, half-open: [x0, x1) × [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TissueRoi {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    /// Thumbnail → level-0 factor per axis.
    pub scale_x: f64,
    pub scale_y: f64,
}

impl TissueRoi {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TissueMaskParams {
    pub min_component_area: usize,
    pub dilate_iters: u32,
}

impl Default for TissueMaskParams {
    fn default() -> Self {
        Self {
            min_component_area: 25,
            dilate_iters: 1,
        }
    }
}

/// Rounded ITU-R 601 luma, computed in integers.
#[inline]
pub fn luma(p: [u8; 3]) -> u8 {
    ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8
}

pub fn gray_histogram(raster: &RasterRgb) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in raster.pixels() {
        hist[luma(p) as usize] += 1;
    }
    hist
}

/// Otsu threshold `t`: the split {v < t} / {v ≥ t} with maximal
/// between-class variance, smallest `t` on ties. A histogram with a single
/// occupied bin returns that bin's index.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let sum_all: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();

    let mut best: Option<(u8, f64)> = None;
    let mut w0: u64 = 0;
    let mut s0: u128 = 0;
    for t in 1..256usize {
        w0 += hist[t - 1];
        s0 += (t as u128 - 1) * hist[t - 1] as u128;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let s1 = sum_all - s0;
        // N²·σ²_between = (w1·S0 − w0·S1)² / (w0·w1)
        let d = w1 as i128 * s0 as i128 - w0 as i128 * s1 as i128;
        let var = (d as f64) * (d as f64) / (w0 as f64 * w1 as f64);
        if best.is_none_or(|(_, b)| var > b) {
            best = Some((t as u8, var));
        }
    }
    match best {
        Some((t, _)) => Ok(t),
        None => Ok(hist.iter().position(|&c| c > 0).expect("nonempty") as u8),
    }
}

/// Removes 8-connected foreground components smaller than `min_area`.
pub fn remove_small_components(mask: &Plane, min_area: usize) -> Plane {
    let mut out = mask.clone();
    components8(mask, |v| v == TISSUE, |comp| {
        if comp.len() < min_area {
            for &i in comp {
                out.data_mut()[i] = 0;
            }
        }
    });
    out
}

/// Otsu tissue mask of a thumbnail: dark pixels are tissue, small
/// components are dropped, then the mask is dilated.
pub fn compute_tissue_mask(thumb: &RasterRgb, params: &TissueMaskParams) -> BinaryMask {
    let hist = gray_histogram(thumb);
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    let (w, h) = (thumb.width(), thumb.height());
    if occupied < 2 {
        return BinaryMask(Plane::filled(w, h, 0));
    }
    let t = otsu_threshold(&hist).expect("nonempty histogram");
    let data = thumb
        .pixels()
        .map(|p| if luma(p) < t { TISSUE } else { 0 })
        .collect();
    let raw = Plane::new(w, h, data).expect("thumbnail dimensions");
    let mut mask = remove_small_components(&raw, params.min_component_area);
    for _ in 0..params.dilate_iters {
        mask = dilate3x3(&mask);
    }
    BinaryMask(mask)
}

/// Tight bounding box of the mask, projected onto level 0.
pub fn roi_from_mask(mask: &BinaryMask, slide: &SlideImage) -> Result<TissueRoi> {
    roi_for_dims(mask, slide.width0(), slide.height0())
}

pub fn roi_for_dims(mask: &BinaryMask, width0: u32, height0: u32) -> Result<TissueRoi> {
    let (mw, mh) = (mask.width() as u64, mask.height() as u64);
    let mut bounds: Option<(u64, u64, u64, u64)> = None;
    for y in 0..mh {
        for x in 0..mw {
            if mask.is_set(x as u32, y as u32) {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    let Some((minx, miny, maxx, maxy)) = bounds else {
        return Err(Error::NoTissueFound);
    };
    let (w0, h0) = (width0 as u64, height0 as u64);
    let x0 = minx * w0 / mw;
    let y0 = miny * h0 / mh;
    let x1 = ((maxx + 1) * w0).div_ceil(mw).min(w0);
    let y1 = ((maxy + 1) * h0).div_ceil(mh).min(h0);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::ZeroAreaRoi);
    }
    Ok(TissueRoi {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
        scale_x: w0 as f64 / mw as f64,
        scale_y: h0 as f64 / mh as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::WHITE;

    fn mask_with(w: u32, h: u32, on: &[(u32, u32)]) -> BinaryMask {
        let mut p = Plane::filled(w, h, 0);
        for &(x, y) in on {
            p.set(x, y, TISSUE);
        }
        BinaryMask::new(p).unwrap()
    }

    #[test]
    fn single_bin_histogram_returns_bin() {
        let mut h = [0u64; 256];
        h[77] = 1000;
        assert_eq!(otsu_threshold(&h).unwrap(), 77);
    }

    #[test]
    fn empty_histogram_errors() {
        assert!(matches!(otsu_threshold(&[0; 256]), Err(Error::EmptyHistogram)));
    }

    #[test]
    fn two_spikes_split_between_them() {
        let mut h = [0u64; 256];
        h[10] = 500;
        h[200] = 300;
        let t = otsu_threshold(&h).unwrap();
        assert!((10..=199).contains(&t));
        // Every split in 11..=200 is the same partition; smallest wins.
        assert_eq!(t, 11);
    }

    #[test]
    fn luma_rounds() {
        assert_eq!(luma([255, 255, 255]), 255);
        assert_eq!(luma([0, 0, 0]), 0);
        // 0.299·1 = 0.299 → 0; 0.587·1 = 0.587 → 1
        assert_eq!(luma([1, 0, 0]), 0);
        assert_eq!(luma([0, 1, 0]), 1);
    }

    #[test]
    fn white_thumbnail_has_no_tissue() {
        let m = compute_tissue_mask(&RasterRgb::filled(40, 30, WHITE), &TissueMaskParams::default());
        assert_eq!(m.count(), 0);
        assert!(matches!(roi_for_dims(&m, 400, 300), Err(Error::NoTissueFound)));
    }

    #[test]
    fn roi_scales_single_pixel() {
        let m = mask_with(50, 50, &[(10, 20)]);
        let roi = roi_for_dims(&m, 100, 100).unwrap();
        assert_eq!((roi.x0, roi.y0, roi.x1, roi.y1), (20, 40, 22, 42));
        assert_eq!((roi.scale_x, roi.scale_y), (2.0, 2.0));
    }

    #[test]
    fn full_mask_roi_is_whole_slide() {
        let m = BinaryMask::new(Plane::filled(30, 20, TISSUE)).unwrap();
        let roi = roi_for_dims(&m, 97, 61).unwrap();
        assert_eq!((roi.x0, roi.y0, roi.x1, roi.y1), (0, 0, 97, 61));
    }

    #[test]
    fn roi_contains_every_projected_pixel() {
        let pts = [(3, 4), (17, 2), (9, 29)];
        let m = mask_with(20, 30, &pts);
        let (w0, h0) = (73, 111);
        let roi = roi_for_dims(&m, w0, h0).unwrap();
        for (x, y) in pts {
            let px0 = (x as f64 * roi.scale_x).floor() as u32;
            let px1 = ((x + 1) as f64 * roi.scale_x).ceil() as u32;
            let py0 = (y as f64 * roi.scale_y).floor() as u32;
            let py1 = ((y + 1) as f64 * roi.scale_y).ceil() as u32;
            assert!(roi.x0 <= px0 && px1.min(w0) <= roi.x1);
            assert!(roi.y0 <= py0 && py1.min(h0) <= roi.y1);
        }
    }

    #[test]
    fn binary_mask_rejects_other_values() {
        assert!(BinaryMask::new(Plane::filled(2, 2, 7)).is_err());
    }
}
