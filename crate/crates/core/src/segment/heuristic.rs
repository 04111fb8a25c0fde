//! Rule-based reference segmenter.
//!
//! Background is near-white and unsaturated in HSL, folds are dark and
//! saturated, blur is tissue whose local Laplacian variance is low. These
//! rules are a stand-in for a trained model; the thresholds are defaults,
//! not measured values.

use serde::{Deserialize, Serialize};

use super::{LabelMask, BACKGROUND, BLUR, FOLD, QUALIFIED};
use crate::raster::{Plane, RasterRgb};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicParams {
    pub bg_min_lightness: f64,
    pub bg_max_saturation: f64,
    pub fold_min_saturation: f64,
    pub fold_max_lightness: f64,
    pub blur_max_variance: f64,
    pub blur_window: u32,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            bg_min_lightness: 0.88,
            bg_max_saturation: 0.12,
            fold_min_saturation: 0.55,
            fold_max_lightness: 0.45,
            blur_max_variance: 25.0,
            blur_window: 9,
        }
    }
}

/// Hue in degrees [0, 360), saturation and lightness in [0, 1].
pub fn rgb_to_hsl(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return (0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, s.min(1.0), l)
}

fn gray(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// 4-neighbour Laplacian with replicated borders.
pub fn laplacian(tile: &RasterRgb) -> Vec<f64> {
    let (w, h) = (tile.width() as usize, tile.height() as usize);
    let g: Vec<f64> = tile.pixels().map(gray).collect();
    let at = |x: usize, y: usize| g[y * w + x];
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = at(x, y);
            let l = at(x.saturating_sub(1), y);
            let r = at((x + 1).min(w - 1), y);
            let u = at(x, y.saturating_sub(1));
            let d = at(x, (y + 1).min(h - 1));
            out[y * w + x] = l + r + u + d - 4.0 * c;
        }
    }
    out
}

/// Variance of `values` over a `window`×`window` box around each pixel,
/// clipped to the image.
pub fn local_variance(values: &[f64], w: usize, h: usize, window: u32) -> Vec<f64> {
    let rad = (window / 2) as usize;
    let stride = w + 1;
    let mut s1 = vec![0.0f64; (w + 1) * (h + 1)];
    let mut s2 = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let (mut r1, mut r2) = (0.0, 0.0);
        for x in 0..w {
            let v = values[y * w + x];
            r1 += v;
            r2 += v * v;
            s1[(y + 1) * stride + x + 1] = s1[y * stride + x + 1] + r1;
            s2[(y + 1) * stride + x + 1] = s2[y * stride + x + 1] + r2;
        }
    }
    let rect = |s: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(rad), (y + rad + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(rad), (x + rad + 1).min(w));
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = rect(&s1, x0, y0, x1, y1) / n;
            let sq = rect(&s2, x0, y0, x1, y1) / n;
            out[y * w + x] = (sq - mean * mean).max(0.0);
        }
    }
    out
}

pub fn heuristic_segment(tile: &RasterRgb, params: &HeuristicParams) -> LabelMask {
    let (w, h) = (tile.width() as usize, tile.height() as usize);
    let lap = laplacian(tile);
    let var = local_variance(&lap, w, h, params.blur_window.max(1));
    let labels = tile
        .pixels()
        .zip(var)
        .map(|(p, v)| {
            let (_, s, l) = rgb_to_hsl(p);
            if l > params.bg_min_lightness && s < params.bg_max_saturation {
                BACKGROUND
            } else if s > params.fold_min_saturation && l < params.fold_max_lightness {
                FOLD
            } else if v < params.blur_max_variance {
                BLUR
            } else {
                QUALIFIED
            }
        })
        .collect();
    LabelMask::from_plane(Plane::new(tile.width(), tile.height(), labels).expect("tile dims"))
        .expect("labels in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsl_of_primaries() {
        assert_eq!(rgb_to_hsl([255, 255, 255]), (0.0, 0.0, 1.0));
        let (h, s, l) = rgb_to_hsl([255, 0, 0]);
        assert_eq!((h, s, l), (0.0, 1.0, 0.5));
        let (h, _, _) = rgb_to_hsl([0, 0, 255]);
        assert_eq!(h, 240.0);
    }

    #[test]
    fn near_white_is_background() {
        let m = heuristic_segment(&RasterRgb::filled(20, 20, [245, 245, 245]), &HeuristicParams::default());
        assert!(m.labels().iter().all(|&v| v == BACKGROUND));
    }

    #[test]
    fn flat_pink_is_blur_and_textured_pink_is_tissue() {
        let p = HeuristicParams::default();
        let flat = heuristic_segment(&RasterRgb::filled(30, 30, [210, 150, 200]), &p);
        assert!(flat.labels().iter().all(|&v| v == BLUR));
        let mut tex = RasterRgb::filled(30, 30, [210, 150, 200]);
        for y in 0..30 {
            for x in 0..30 {
                if (x + y) % 2 == 0 {
                    tex.put(x, y, [225, 170, 215]);
                }
            }
        }
        let m = heuristic_segment(&tex, &p);
        assert!(m.labels().iter().all(|&v| v == QUALIFIED));
    }

    #[test]
    fn dark_saturated_purple_is_fold() {
        let m = heuristic_segment(&RasterRgb::filled(10, 10, [110, 20, 120]), &HeuristicParams::default());
        assert!(m.labels().iter().all(|&v| v == FOLD));
    }

    #[test]
    fn local_variance_of_constant_is_zero() {
        let v = local_variance(&[3.0; 25], 5, 5, 3);
        assert!(v.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn local_variance_matches_brute_force() {
        let (w, h) = (7usize, 6usize);
        let vals: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let fast = local_variance(&vals, w, h, 5);
        for y in 0..h {
            for x in 0..w {
                let mut xs = Vec::new();
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        xs.push(vals[yy * w + xx]);
                    }
                }
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                assert!((fast[y * w + x] - var).abs() < 1e-9);
            }
        }
    }
}
