//! Center-tile grid over the tissue box, overlapping neighbors, and ordered
//! parallel extraction of tile sets.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterRgb;
use crate::slide::{RegionSpec, SlideImage};
use crate::tissue::TissueRoi;

/// Position of a tile within its set. Declaration order is the selection
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    C,
    L,
    U,
    R,
    D,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::C, Variant::L, Variant::U, Variant::R, Variant::D];

    pub fn ordinal(self) -> u64 {
        self as u64
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::C => "C",
            Variant::L => "L",
            Variant::U => "U",
            Variant::R => "R",
            Variant::D => "D",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tile's identity and level-0 placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRef {
    pub set_index: u32,
    pub variant: Variant,
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl TileRef {
    /// Stable identifier used for mask files and wire messages.
    pub fn tile_id(&self) -> u64 {
        self.set_index as u64 * 10 + self.variant.ordinal()
    }

    pub fn region(&self) -> RegionSpec {
        RegionSpec::level0(self.x, self.y, self.width, self.height)
    }

    /// Area of intersection with another tile.
    pub fn overlap_area(&self, other: &TileRef) -> u64 {
        let w = (self.x + self.width as i64).min(other.x + other.width as i64) - self.x.max(other.x);
        let h = (self.y + self.height as i64).min(other.y + other.height as i64) - self.y.max(other.y);
        if w > 0 && h > 0 {
            (w * h) as u64
        } else {
            0
        }
    }
}

/// Splits a tile_id back into (set_index, variant).
pub fn parse_tile_id(id: u64) -> Option<(u32, Variant)> {
    let v = *Variant::ALL.get((id % 10) as usize)?;
    Some(((id / 10) as u32, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub roi: TissueRoi,
    pub tile_w: u32,
    pub tile_h: u32,
    pub overlap: f64,
    pub overlap_px_x: u32,
    pub overlap_px_y: u32,
    pub n_cols: u32,
    pub n_rows: u32,
}

/// `round(fraction · size)`, halves rounded up.
fn overlap_px(fraction: f64, size: u32) -> u32 {
    (fraction * size as f64 + 0.5).floor() as u32
}

pub fn plan_grid(roi: &TissueRoi, tile_w: u32, tile_h: u32, overlap: f64) -> Result<TileGrid> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap must be in [0,1), got {overlap}")));
    }
    if tile_w == 0 || tile_h == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if roi.x1 <= roi.x0 || roi.y1 <= roi.y0 {
        return Err(Error::ZeroAreaRoi);
    }
    Ok(TileGrid {
        roi: *roi,
        tile_w,
        tile_h,
        overlap,
        overlap_px_x: overlap_px(overlap, tile_w),
        overlap_px_y: overlap_px(overlap, tile_h),
        n_cols: roi.width().div_ceil(tile_w),
        n_rows: roi.height().div_ceil(tile_h),
    })
}

impl TileGrid {
    pub fn len(&self) -> u32 {
        self.n_cols * self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Neighbor shift along each axis.
    pub fn offsets(&self) -> (i64, i64) {
        (
            (self.tile_w - self.overlap_px_x) as i64,
            (self.tile_h - self.overlap_px_y) as i64,
        )
    }

    /// Row/column of a 1-based set index.
    pub fn cell(&self, set_index: u32) -> (u32, u32) {
        let i = set_index - 1;
        (i / self.n_cols, i % self.n_cols)
    }

    pub fn center(&self, set_index: u32) -> TileRef {
        let (r, c) = self.cell(set_index);
        TileRef {
            set_index,
            variant: Variant::C,
            x: self.roi.x0 as i64 + c as i64 * self.tile_w as i64,
            y: self.roi.y0 as i64 + r as i64 * self.tile_h as i64,
            width: self.tile_w,
            height: self.tile_h,
        }
    }

    pub fn centers(&self) -> impl Iterator<Item = TileRef> + '_ {
        (1..=self.len()).map(|n| self.center(n))
    }

    fn intersects_roi(&self, t: &TileRef) -> bool {
        let r = &self.roi;
        t.x < r.x1 as i64 && t.x + t.width as i64 > r.x0 as i64 && t.y < r.y1 as i64 && t.y + t.height as i64 > r.y0 as i64
    }

    /// The members of a set in C, L, U, R, D order.
    pub fn set_members(&self, set_index: u32) -> Vec<TileRef> {
        let c = self.center(set_index);
        let mut v = vec![c];
        v.extend(neighbors_for(&c, self));
        v
    }
}

/// L, U, R, D neighbors of a center tile; neighbors lying entirely outside
/// the ROI are dropped.
pub fn neighbors_for(center: &TileRef, grid: &TileGrid) -> Vec<TileRef> {
    debug_assert_eq!(center.variant, Variant::C);
    let (dx, dy) = grid.offsets();
    [
        (Variant::L, -dx, 0),
        (Variant::U, 0, -dy),
        (Variant::R, dx, 0),
        (Variant::D, 0, dy),
    ]
    .into_iter()
    .map(|(variant, ox, oy)| TileRef {
        variant,
        x: center.x + ox,
        y: center.y + oy,
        ..*center
    })
    .filter(|t| grid.intersects_roi(t))
    .collect()
}

#[derive(Debug, Clone)]
pub struct TileMember {
    pub tile: TileRef,
    pub raster: RasterRgb,
}

#[derive(Debug, Clone)]
pub struct TileSet {
    pub set_index: u32,
    pub members: Vec<TileMember>,
}

impl TileSet {
    pub fn member(&self, v: Variant) -> Option<&TileMember> {
        self.members.iter().find(|m| m.tile.variant == v)
    }
}

pub fn read_set(slide: &SlideImage, grid: &TileGrid, set_index: u32) -> Result<TileSet> {
    let members = grid
        .set_members(set_index)
        .into_iter()
        .map(|tile| {
            let raster = slide
                .read_region(&tile.region())
                .map_err(|e| e.in_stage("tile", Some(set_index)))?;
            Ok(TileMember { tile, raster })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TileSet { set_index, members })
}

/// Bounded worker pool shared by the parallel stages.
pub struct Workers {
    pool: rayon::ThreadPool,
    count: usize,
}

impl Workers {
    pub fn new(count: usize) -> Result<Workers> {
        let count = count.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .thread_name(|i| format!("wsitile-{i}"))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {count} workers: {e}")))?;
        Ok(Workers { pool, count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Maps `f` over `items` on the pool, preserving input order.
    pub fn map_ordered<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Sync + Send,
    {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }

    /// Sets in flight per batch; bounds resident tile memory.
    pub fn batch_size(&self) -> usize {
        self.count * 4
    }
}

/// Ordered stream of tile sets. Each batch is read in parallel; the consumer
/// sees ascending `set_index` regardless of worker count.
pub struct SetStream<'a> {
    slide: &'a SlideImage,
    grid: &'a TileGrid,
    workers: &'a Workers,
    next: u32,
    ready: VecDeque<Result<TileSet>>,
}

impl<'a> SetStream<'a> {
    pub fn grid(&self) -> &TileGrid {
        self.grid
    }
}

impl Iterator for SetStream<'_> {
    type Item = Result<TileSet>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.ready.is_empty() && self.next <= self.grid.len() {
            let end = (self.next + self.workers.batch_size() as u32).min(self.grid.len() + 1);
            let indices: Vec<u32> = (self.next..end).collect();
            self.next = end;
            let (slide, grid) = (self.slide, self.grid);
            self.ready
                .extend(self.workers.map_ordered(indices, |n| read_set(slide, grid, n)));
        }
        self.ready.pop_front()
    }
}

pub fn extract_sets<'a>(slide: &'a SlideImage, grid: &'a TileGrid, workers: &'a Workers) -> SetStream<'a> {
    SetStream {
        slide,
        grid,
        workers,
        next: 1,
        ready: VecDeque::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(x0: u32, y0: u32, x1: u32, y1: u32) -> TissueRoi {
        TissueRoi {
            x0,
            y0,
            x1,
            y1,
            scale_x: 1.0,
            scale_y: 1.0,
        }
    }

    #[test]
    fn exact_division_grid() {
        let g = plan_grid(&roi(0, 0, 540, 540), 270, 270, 0.25).unwrap();
        assert_eq!((g.n_cols, g.n_rows, g.len()), (2, 2, 4));
    }

    #[test]
    fn ceiling_grid() {
        let g = plan_grid(&roi(0, 0, 541, 270), 270, 270, 0.25).unwrap();
        assert_eq!((g.n_cols, g.n_rows), (3, 1));
    }

    #[test]
    fn overlap_rounding_and_offset() {
        let g = plan_grid(&roi(1000, 1000, 2000, 2000), 270, 270, 0.25).unwrap();
        assert_eq!(g.overlap_px_x, 68);
        assert_eq!(g.offsets(), (202, 202));
        let c = g.center(5);
        let n = neighbors_for(&c, &g);
        let r = n.iter().find(|t| t.variant == Variant::R).unwrap();
        assert_eq!((r.x, r.y), (c.x + 202, c.y));
        let l = n.iter().find(|t| t.variant == Variant::L).unwrap();
        assert_eq!((l.x, l.y), (c.x - 202, c.y));
    }

    #[test]
    fn zero_overlap_neighbors_abut() {
        let g = plan_grid(&roi(1000, 1000, 2000, 2000), 270, 270, 0.0).unwrap();
        let c = g.center(6);
        for n in neighbors_for(&c, &g) {
            assert_eq!(n.overlap_area(&c), 0);
            assert_eq!((n.x - c.x).abs() + (n.y - c.y).abs(), 270);
        }
    }

    #[test]
    fn top_left_center_drops_outside_neighbors_without_overlap() {
        let g = plan_grid(&roi(100, 100, 1000, 1000), 270, 270, 0.0).unwrap();
        let members = g.set_members(1);
        let vs: Vec<_> = members.iter().map(|t| t.variant).collect();
        assert_eq!(vs, vec![Variant::C, Variant::R, Variant::D]);
    }

    #[test]
    fn partially_outside_neighbors_are_kept() {
        // At 25% overlap the left neighbor of a left-column center still
        // reaches 68 px into the ROI.
        let g = plan_grid(&roi(100, 100, 1000, 1000), 270, 270, 0.25).unwrap();
        assert_eq!(g.set_members(1).len(), 5);
    }

    #[test]
    fn roi_smaller_than_tile_has_lone_center() {
        let g = plan_grid(&roi(0, 0, 200, 150), 270, 270, 0.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.set_members(1).len(), 1);
    }

    #[test]
    fn invalid_overlap() {
        assert!(plan_grid(&roi(0, 0, 10, 10), 5, 5, 1.0).is_err());
        assert!(plan_grid(&roi(0, 0, 10, 10), 5, 5, -0.1).is_err());
    }

    #[test]
    fn tile_id_round_trip() {
        let t = TileRef {
            set_index: 42,
            variant: Variant::U,
            x: 0,
            y: 0,
            width: 1,
            height: 1,
        };
        assert_eq!(t.tile_id(), 422);
        assert_eq!(parse_tile_id(422), Some((42, Variant::U)));
        assert_eq!(parse_tile_id(427), None);
    }
}
