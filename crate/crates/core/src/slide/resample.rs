use crate::error::Result;
use crate::raster::{RasterRgb, WHITE};

/// Output rows produced per source band read.
const BAND_ROWS: u32 = 64;

/// Per-output-index list of (source index, coverage weight).
fn axis_weights(src: u32, dst: u32) -> Vec<Vec<(u32, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let a = o as f64 * scale;
            let b = ((o + 1) as f64 * scale).min(src as f64);
            let first = a.floor() as u32;
            let last = (b.ceil() as u32).min(src).max(first + 1);
            (first..last)
                .filter_map(|i| {
                    let w = b.min(i as f64 + 1.0) - a.max(i as f64);
                    (w > 0.0).then_some((i.min(src - 1), w))
                })
                .collect()
        })
        .collect()
}

/// Box-filter resample of a `src_w`×`src_h` image to `dst_w`×`dst_h`.
///
/// Each output pixel is the coverage-weighted mean of the source pixels its
/// footprint overlaps, rounded half up. `read_band(y0, rows)` must return
/// source rows `y0..y0+rows` at full source width.
pub fn area_resample<F>(src_w: u32, src_h: u32, dst_w: u32, dst_h: u32, mut read_band: F) -> Result<RasterRgb>
where
    F: FnMut(u32, u32) -> Result<RasterRgb>,
{
    let mut out = RasterRgb::filled(dst_w, dst_h, WHITE);
    if src_w == 0 || src_h == 0 {
        return Ok(out);
    }
    let wx = axis_weights(src_w, dst_w);
    let wy = axis_weights(src_h, dst_h);

    let mut oy0 = 0;
    while oy0 < dst_h {
        let oy1 = (oy0 + BAND_ROWS).min(dst_h);
        let sy0 = wy[oy0 as usize].first().map_or(0, |&(i, _)| i);
        let sy1 = wy[oy1 as usize - 1].last().map_or(sy0, |&(i, _)| i) + 1;
        let band = read_band(sy0, sy1 - sy0)?;

        // Horizontal pass over every band row, then vertical accumulation.
        let mut horiz = vec![0f64; (sy1 - sy0) as usize * dst_w as usize * 3];
        for row in 0..(sy1 - sy0) {
            let src = &band.as_bytes()[(row as usize * src_w as usize) * 3..][..src_w as usize * 3];
            let dst = &mut horiz[row as usize * dst_w as usize * 3..][..dst_w as usize * 3];
            for (ox, weights) in wx.iter().enumerate() {
                let mut acc = [0f64; 3];
                for &(sx, w) in weights {
                    let p = &src[sx as usize * 3..sx as usize * 3 + 3];
                    acc[0] += w * p[0] as f64;
                    acc[1] += w * p[1] as f64;
                    acc[2] += w * p[2] as f64;
                }
                dst[ox * 3..ox * 3 + 3].copy_from_slice(&acc);
            }
        }
        let xnorm: Vec<f64> = wx.iter().map(|ws| ws.iter().map(|&(_, w)| w).sum()).collect();

        for oy in oy0..oy1 {
            let weights = &wy[oy as usize];
            let ynorm: f64 = weights.iter().map(|&(_, w)| w).sum();
            for ox in 0..dst_w as usize {
                let mut acc = [0f64; 3];
                for &(sy, w) in weights {
                    let h = &horiz[((sy - sy0) as usize * dst_w as usize + ox) * 3..][..3];
                    acc[0] += w * h[0];
                    acc[1] += w * h[1];
                    acc[2] += w * h[2];
                }
                let norm = ynorm * xnorm[ox];
                let px = acc.map(|v| (v / norm + 0.5).floor().clamp(0.0, 255.0) as u8);
                out.put(ox as u32, oy, px);
            }
        }
        oy0 = oy1;
    }
    Ok(out)
}
