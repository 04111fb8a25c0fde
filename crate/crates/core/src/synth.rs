//! Seeded synthetic slides with exact ground truth, for tests and demos.
//!
//! Draw order is tissue, blur, fold, pen. The label mask follows the same
//! priority except that pen strokes keep the label underneath them; strokes
//! are recorded in a separate pen mask.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Plane, RasterRgb, WHITE};
use crate::segment::{LabelMask, BACKGROUND, BLUR, FOLD, QUALIFIED};

/// Largest accepted canvas side.
pub const MAX_SIDE: u32 = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Blob {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x: u32, y: u32, w: u32, h: u32 },
}

impl Blob {
    fn contains(&self, x: u32, y: u32) -> bool {
        match *self {
            Blob::Ellipse { cx, cy, rx, ry } => {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
            Blob::Rect { x: rx, y: ry, w, h } => x >= rx && x < rx + w && y >= ry && y < ry + h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBlobs {
    pub count: u32,
    pub min_radius: f64,
    pub max_radius: f64,
}

/// Straight band through (`cx`, `cy`) at `angle_deg` from the x axis.
/// A pixel is in the band when its center lies strictly within `width / 2`
/// of the center line (and within `length / 2` along it, if given).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldBand {
    pub cx: f64,
    pub cy: f64,
    pub angle_deg: f64,
    pub width: f64,
    #[serde(default)]
    pub length: Option<f64>,
}

impl FoldBand {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let across = -dx * s + dy * c;
        let along = dx * c + dy * s;
        across.abs() < self.width / 2.0 && self.length.is_none_or(|l| along.abs() <= l / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurPatch {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub sigma: f64,
}

impl BlurPatch {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ink {
    Red,
    Green,
    Blue,
    Black,
}

impl Ink {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Ink::Red => [200, 20, 30],
            Ink::Green => [20, 160, 40],
            Ink::Blue => [20, 30, 200],
            Ink::Black => [20, 20, 25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenStroke {
    pub color: Ink,
    pub width: f64,
    pub points: Vec<[f64; 2]>,
}

impl PenStroke {
    fn contains(&self, x: u32, y: u32) -> bool {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let r2 = (self.width / 2.0).powi(2);
        if self.points.len() == 1 {
            return dist2_to_segment(p, self.points[0], self.points[0]) <= r2;
        }
        self.points.windows(2).any(|w| dist2_to_segment(p, w[0], w[1]) <= r2)
    }
}

fn dist2_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a[0] + t * vx - p[0], a[1] + t * vy - p[1]);
    qx * qx + qy * qy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub random_blobs: Option<RandomBlobs>,
    #[serde(default)]
    pub folds: Vec<FoldBand>,
    #[serde(default)]
    pub blur_patches: Vec<BlurPatch>,
    #[serde(default)]
    pub pen_strokes: Vec<PenStroke>,
    /// Lattice spacing of the low-frequency texture, pixels.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: u32,
}

fn default_texture_scale() -> u32 {
    24
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<SynthSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let oob = |m: String| Err(Error::SpecOutOfBounds(m));
        if self.width == 0 || self.height == 0 || self.width > MAX_SIDE || self.height > MAX_SIDE {
            return oob(format!("canvas {}x{} outside 1..={MAX_SIDE}", self.width, self.height));
        }
        if self.texture_scale == 0 {
            return oob("texture_scale must be positive".into());
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let inside = |x: f64, y: f64| x.is_finite() && y.is_finite() && (0.0..=w).contains(&x) && (0.0..=h).contains(&y);
        for (i, b) in self.blobs.iter().enumerate() {
            let ok = match *b {
                Blob::Ellipse { cx, cy, rx, ry } => inside(cx, cy) && rx > 0.0 && ry > 0.0,
                Blob::Rect { x, y, w: bw, h: bh } => {
                    bw > 0 && bh > 0 && x as u64 + bw as u64 <= self.width as u64 && y as u64 + bh as u64 <= self.height as u64
                }
            };
            if !ok {
                return oob(format!("blob {i} leaves the canvas or is empty"));
            }
        }
        if let Some(r) = &self.random_blobs {
            if !(r.min_radius > 0.0 && r.min_radius <= r.max_radius && r.max_radius.is_finite()) {
                return oob("random blob radii must satisfy 0 < min <= max".into());
            }
        }
        for (i, f) in self.folds.iter().enumerate() {
            if !inside(f.cx, f.cy) || !(f.width > 0.0) || !f.angle_deg.is_finite() || f.length.is_some_and(|l| !(l > 0.0)) {
                return oob(format!("fold {i} is off the canvas or degenerate"));
            }
        }
        for (i, p) in self.blur_patches.iter().enumerate() {
            if !inside(p.cx, p.cy) || !(p.radius > 0.0) || !(p.sigma > 0.0 && p.sigma <= 64.0) {
                return oob(format!("blur patch {i} is off the canvas or degenerate"));
            }
        }
        for (i, s) in self.pen_strokes.iter().enumerate() {
            if s.points.is_empty() || !(s.width > 0.0) || s.points.iter().any(|p| !inside(p[0], p[1])) {
                return oob(format!("pen stroke {i} is off the canvas or degenerate"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub slide: RasterRgb,
    pub gt: LabelMask,
    /// 255 on pen stroke pixels.
    pub pen: Plane,
}

impl SynthOutput {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.slide.save_png(&dir.join("slide.png"))?;
        self.gt.save_png(&dir.join("gt_mask.png"))?;
        self.pen.save_png(&dir.join("pen_mask.png"))
    }
}

/// Low-frequency value noise in [0, 1] on a lattice with bilinear blending.
struct ValueNoise {
    cols: usize,
    scale: f64,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, w: u32, h: u32, scale: u32) -> ValueNoise {
        let cols = (w / scale) as usize + 2;
        let rows = (h / scale) as usize + 2;
        ValueNoise {
            cols,
            scale: scale as f64,
            lattice: (0..cols * rows).map(|_| rng.gen::<f64>()).collect(),
        }
    }

    fn at(&self, x: u32, y: u32) -> f64 {
        let fx = x as f64 / self.scale;
        let fy = y as f64 / self.scale;
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let v = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = v(ix, iy) * (1.0 - sx) + v(ix + 1, iy) * sx;
        let bottom = v(ix, iy + 1) * (1.0 - sx) + v(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

/// Two H&E-like tones blended by value noise, plus per-pixel grain.
fn tissue_colour(noise: f64, rng: &mut ChaCha8Rng) -> [u8; 3] {
    const PINK: [f64; 3] = [232.0, 175.0, 220.0];
    const PURPLE: [f64; 3] = [190.0, 132.0, 195.0];
    const LO: [f64; 3] = [180.0, 120.0, 180.0];
    const HI: [f64; 3] = [240.0, 190.0, 230.0];
    let grain = rng.gen_range(-14.0..14.0);
    [0, 1, 2].map(|k| {
        let base = PURPLE[k] + (PINK[k] - PURPLE[k]) * noise;
        let jitter = rng.gen_range(-6.0..6.0);
        (base + grain + jitter).clamp(LO[k], HI[k]).round() as u8
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of the box [x0,x1)×[y0,y1), replicating edges of
/// the full image. Returns the blurred box.
fn blur_box(src: &RasterRgb, x0: u32, y0: u32, x1: u32, y1: u32, sigma: f64) -> Vec<[f64; 3]> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (src.width() as i64, src.height() as i64);
    let (bw, bh) = ((x1 - x0) as usize, (y1 - y0) as usize);
    // Horizontal pass over the rows the vertical pass will need.
    let ry0 = (y0 as i64 - r).max(0);
    let ry1 = (y1 as i64 + r).min(h);
    let mut horiz = vec![[0.0f64; 3]; (ry1 - ry0) as usize * bw];
    for yy in ry0..ry1 {
        for (bx, x) in (x0..x1).enumerate() {
            let mut acc = [0.0; 3];
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as i64 + i as i64 - r).clamp(0, w - 1) as u32;
                let p = src.get(sx, yy as u32);
                for c in 0..3 {
                    acc[c] += kv * p[c] as f64;
                }
            }
            horiz[(yy - ry0) as usize * bw + bx] = acc;
        }
    }
    let mut out = vec![[0.0f64; 3]; bw * bh];
    for (by, y) in (y0..y1).enumerate() {
        for bx in 0..bw {
            let mut acc = [0.0; 3];
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as i64 + i as i64 - r).clamp(0, h - 1);
                let p = horiz[(sy - ry0) as usize * bw + bx];
                for c in 0..3 {
                    acc[c] += kv * p[c];
                }
            }
            out[by * bw + bx] = acc;
        }
    }
    out
}

pub fn gen_slide(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut blobs = spec.blobs.clone();
    if let Some(r) = spec.random_blobs {
        for _ in 0..r.count {
            let rx = rng.gen_range(r.min_radius..=r.max_radius);
            let ry = rng.gen_range(r.min_radius..=r.max_radius);
            let cx = rng.gen_range(rx.min(w as f64 / 2.0)..=(w as f64 - rx).max(w as f64 / 2.0));
            let cy = rng.gen_range(ry.min(h as f64 / 2.0)..=(h as f64 - ry).max(h as f64 / 2.0));
            blobs.push(Blob::Ellipse { cx, cy, rx, ry });
        }
    }
    let noise = ValueNoise::new(&mut rng, w, h, spec.texture_scale);

    let mut slide = RasterRgb::filled(w, h, WHITE);
    let mut labels = Plane::filled(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            // Grain is drawn for every pixel so the stream does not depend
            // on the blob layout beyond the blob list itself.
            let colour = tissue_colour(noise.at(x, y), &mut rng);
            if blobs.iter().any(|b| b.contains(x, y)) {
                slide.put(x, y, colour);
                labels.set(x, y, QUALIFIED);
            }
        }
    }

    let tissue = slide.clone();
    for p in &spec.blur_patches {
        let x0 = (p.cx - p.radius).floor().max(0.0) as u32;
        let y0 = (p.cy - p.radius).floor().max(0.0) as u32;
        let x1 = ((p.cx + p.radius).ceil() as u32 + 1).min(w);
        let y1 = ((p.cy + p.radius).ceil() as u32 + 1).min(h);
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let blurred = blur_box(&tissue, x0, y0, x1, y1, p.sigma);
        let bw = (x1 - x0) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                if labels.get(x, y) != BACKGROUND && p.contains(x, y) {
                    let v = blurred[(y - y0) as usize * bw + (x - x0) as usize];
                    slide.put(x, y, v.map(|c| c.round().clamp(0.0, 255.0) as u8));
                    labels.set(x, y, BLUR);
                }
            }
        }
    }

    for f in &spec.folds {
        for y in 0..h {
            for x in 0..w {
                if labels.get(x, y) != BACKGROUND && f.contains(x, y) {
                    let [r, g, b] = slide.get(x, y).map(|c| c as f64);
                    slide.put(x, y, [(r * 0.5).round() as u8, (g * 0.1).round() as u8, (b * 0.55).round() as u8]);
                    labels.set(x, y, FOLD);
                }
            }
        }
    }

    let mut pen = Plane::filled(w, h, 0);
    for s in &spec.pen_strokes {
        let r = s.width / 2.0;
        let xs = s.points.iter().map(|p| p[0]);
        let ys = s.points.iter().map(|p| p[1]);
        let x0 = (xs.clone().fold(f64::INFINITY, f64::min) - r).floor().max(0.0) as u32;
        let x1 = ((xs.fold(f64::NEG_INFINITY, f64::max) + r).ceil().max(0.0) as u32 + 1).min(w);
        let y0 = (ys.clone().fold(f64::INFINITY, f64::min) - r).floor().max(0.0) as u32;
        let y1 = ((ys.fold(f64::NEG_INFINITY, f64::max) + r).ceil().max(0.0) as u32 + 1).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if s.contains(x, y) {
                    slide.put(x, y, s.color.rgb());
                    pen.set(x, y, 255);
                }
            }
        }
    }

    Ok(SynthOutput {
        slide,
        gt: LabelMask::from_plane(labels).expect("labels 0..=3"),
        pen,
    })
}
