#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wsitile::raster::Plane;
use wsitile::segment::{mask_path, LabelMask, BACKGROUND, BLUR, FOLD, QUALIFIED};
use wsitile::synth::{gen_slide, Blob, BlurPatch, FoldBand, Ink, PenStroke, RandomBlobs, SynthOutput, SynthSpec};
use wsitile::tiler::{TileGrid, Variant};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wsitile"))
}

pub fn wsitile(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn wsitile");
    if !out.status.success() {
        eprintln!("wsitile {args:?}\nstdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    }
    out
}

pub fn spec_base(width: u32, height: u32, seed: u64) -> SynthSpec {
    SynthSpec {
        width,
        height,
        seed,
        blobs: vec![],
        random_blobs: None,
        folds: vec![],
        blur_patches: vec![],
        pen_strokes: vec![],
        texture_scale: 24,
    }
}

/// Tissue over the whole canvas; 3×2 tiles of 270 px.
pub fn artifact_free(seed: u64) -> SynthSpec {
    SynthSpec {
        blobs: vec![Blob::Rect { x: 0, y: 0, w: 810, h: 540 }],
        ..spec_base(810, 540, seed)
    }
}

/// One tissue rectangle whose ROI is (39,39)-(960,720) after the 1-px
/// dilation, with fold bands laid along the center-grid lines at
/// x = 309, 579 and y = 309.
pub fn fold_straddle(seed: u64) -> SynthSpec {
    SynthSpec {
        blobs: vec![Blob::Rect { x: 40, y: 40, w: 919, h: 679 }],
        folds: vec![
            FoldBand { cx: 309.0, cy: 380.0, angle_deg: 90.0, width: 36.0, length: None },
            FoldBand { cx: 579.0, cy: 200.0, angle_deg: 90.0, width: 24.0, length: Some(300.0) },
            FoldBand { cx: 600.0, cy: 309.0, angle_deg: 0.0, width: 30.0, length: Some(500.0) },
        ],
        blur_patches: vec![BlurPatch { cx: 849.0, cy: 579.0, radius: 60.0, sigma: 3.0 }],
        ..spec_base(1000, 760, seed)
    }
}

/// Random tissue islands with every artifact type, for end-to-end runs.
pub fn mixed(seed: u64) -> SynthSpec {
    SynthSpec {
        random_blobs: Some(RandomBlobs { count: 4, min_radius: 120.0, max_radius: 260.0 }),
        blobs: vec![Blob::Ellipse { cx: 450.0, cy: 350.0, rx: 300.0, ry: 220.0 }],
        folds: vec![FoldBand {
            cx: 450.0,
            cy: 350.0,
            angle_deg: 20.0 + seed as f64 * 35.0,
            width: 28.0,
            length: Some(420.0),
        }],
        blur_patches: vec![BlurPatch { cx: 330.0, cy: 260.0, radius: 70.0, sigma: 3.5 }],
        pen_strokes: vec![
            PenStroke { color: Ink::Blue, width: 8.0, points: vec![[120.0, 600.0], [400.0, 640.0], [700.0, 590.0]] },
            PenStroke { color: Ink::Black, width: 5.0, points: vec![[600.0, 120.0], [820.0, 200.0]] },
        ],
        ..spec_base(900, 700, seed)
    }
}

/// Small slide with many sets at a 64-px tile size (review mechanics).
pub fn small_many_sets(seed: u64) -> SynthSpec {
    SynthSpec {
        blobs: vec![Blob::Ellipse { cx: 200.0, cy: 150.0, rx: 190.0, ry: 140.0 }],
        folds: vec![FoldBand { cx: 200.0, cy: 150.0, angle_deg: 45.0, width: 12.0, length: None }],
        ..spec_base(400, 300, seed)
    }
}

pub fn write_synth(dir: &Path, spec: &SynthSpec) -> (PathBuf, SynthOutput) {
    let out = gen_slide(spec).unwrap();
    out.write(dir).unwrap();
    (dir.join("slide.png"), out)
}

/// Ground-truth crop of a tile; outside the canvas is background.
pub fn gt_crop(gt: &LabelMask, x: i64, y: i64, w: u32, h: u32) -> LabelMask {
    let mut p = Plane::filled(w, h, BACKGROUND);
    for ty in 0..h {
        for tx in 0..w {
            let (gx, gy) = (x + tx as i64, y + ty as i64);
            if gx >= 0 && gy >= 0 && (gx as u32) < gt.width() && (gy as u32) < gt.height() {
                p.set(tx, ty, gt.get(gx as u32, gy as u32));
            }
        }
    }
    LabelMask::from_plane(p).unwrap()
}

/// Set members recomputed from the grid's geometry alone: the center at
/// its cell, then L, U, R, D shifted by the tile side minus the rounded
/// overlap, dropping those entirely outside the ROI.
pub fn oracle_members(grid: &TileGrid, set_index: u32) -> Vec<(Variant, i64, i64)> {
    let i = set_index - 1;
    let (row, col) = (i / grid.n_cols, i % grid.n_cols);
    let cx = grid.roi.x0 as i64 + (col * grid.tile_w) as i64;
    let cy = grid.roi.y0 as i64 + (row * grid.tile_h) as i64;
    let dx = grid.tile_w as i64 - (grid.overlap * grid.tile_w as f64).round() as i64;
    let dy = grid.tile_h as i64 - (grid.overlap * grid.tile_h as f64).round() as i64;
    let (w, h) = (grid.tile_w as i64, grid.tile_h as i64);
    let r = grid.roi;
    let inside = |x: i64, y: i64| x < r.x1 as i64 && x + w > r.x0 as i64 && y < r.y1 as i64 && y + h > r.y0 as i64;
    let mut out = vec![(Variant::C, cx, cy)];
    for (v, x, y) in [
        (Variant::L, cx - dx, cy),
        (Variant::U, cx, cy - dy),
        (Variant::R, cx + dx, cy),
        (Variant::D, cx, cy + dy),
    ] {
        if inside(x, y) {
            out.push((v, x, y));
        }
    }
    out
}

/// Writes a ground-truth mask for every member of every set.
pub fn write_gt_maskdir(gt: &LabelMask, grid: &TileGrid, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for s in 1..=grid.n_cols * grid.n_rows {
        for (v, x, y) in oracle_members(grid, s) {
            let id = s as u64 * 10 + v.ordinal();
            gt_crop(gt, x, y, grid.tile_w, grid.tile_h).save_png(&mask_path(dir, id)).unwrap();
        }
    }
}

pub fn counts(m: &LabelMask) -> [u64; 4] {
    let mut c = [0u64; 4];
    for &l in m.labels() {
        c[l as usize] += 1;
    }
    c
}

/// Qualified-tissue gain recomputed by pixel counting on the ground truth:
/// per set, the member with the most label-1 pixels (first in C, L, U, R, D
/// order) against the centers a background/artifact threshold would keep.
pub fn gain_oracle(gt: &LabelMask, grid: &TileGrid, t_bg: f64, t_art: f64) -> Option<f64> {
    let n = (grid.tile_w * grid.tile_h) as f64;
    let (mut standard, mut proposed) = (0u64, 0u64);
    for s in 1..=grid.n_cols * grid.n_rows {
        let mut best: Option<u64> = None;
        for (v, x, y) in oracle_members(grid, s) {
            let c = counts(&gt_crop(gt, x, y, grid.tile_w, grid.tile_h));
            let q = c[QUALIFIED as usize];
            if best.is_none_or(|b| q > b) {
                best = Some(q);
            }
            if v == Variant::C
                && (c[BACKGROUND as usize] as f64 / n) < t_bg
                && ((c[FOLD as usize] + c[BLUR as usize]) as f64 / n) < t_art
            {
                standard += q;
            }
        }
        proposed += best.unwrap();
    }
    (standard > 0).then(|| (proposed as f64 - standard as f64) / standard as f64 * 100.0)
}

/// Expands a confusion matrix into `id,class` truth and prediction files.
pub fn write_confusion_csvs(dir: &Path, m: [[u64; 3]; 3]) -> (PathBuf, PathBuf) {
    const NAMES: [&str; 3] = ["artifact_free", "blur", "fold"];
    let mut truth = String::from("id,class\n");
    let mut pred = String::from("id,class\n");
    let mut id = 0u64;
    for (t, row) in m.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            for _ in 0..count {
                truth.push_str(&format!("t{id},{}\n", NAMES[t]));
                pred.push_str(&format!("t{id},{}\n", NAMES[p]));
                id += 1;
            }
        }
    }
    let (tp, pp) = (dir.join("truth.csv"), dir.join("preds.csv"));
    std::fs::write(&tp, truth).unwrap();
    std::fs::write(&pp, pred).unwrap();
    (tp, pp)
}

/// Development-set confusion counts, rows truth, columns prediction.
pub const DEV_COUNTS: [[u64; 3]; 3] = [[1437, 0, 1], [0, 1009, 0], [2, 0, 843]];

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
