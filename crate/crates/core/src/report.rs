//! Slide-level mosaic, manifest, run statistics and the qualified-tissue
//! gain over standard tiling.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penmark::{PenClass, PenStats};
use crate::raster::{Plane, RasterRgb};
use crate::segment::{LabelMask, BACKGROUND, NUM_LABELS};
use crate::selector::{ArtifactFractions, MemberCost};
use crate::tiler::{TileGrid, TileRef, Variant};
use crate::tissue::TissueRoi;

/// Present in an output directory until every file has been written.
pub const PARTIAL_MARKER: &str = "PARTIAL_OUTPUT";

pub const PALETTE: [[u8; 3]; NUM_LABELS] = [[0, 0, 0], [0, 170, 0], [220, 0, 0], [255, 140, 0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub variant: Variant,
    pub x: i64,
    pub y: i64,
    pub pen_class: PenClass,
    pub pen: PenStats,
    /// The cleaning backend ran and returned a tile.
    pub cleaned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Absent for High-pen members, which are never segmented.
    pub fractions: Option<ArtifactFractions>,
    pub qualified_px: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub set_index: u32,
    pub chosen: Option<Variant>,
    /// Level-0 origin of the chosen tile.
    pub x: Option<i64>,
    pub y: Option<i64>,
    pub cost: f64,
    pub fractions: Option<ArtifactFractions>,
    pub costs: Vec<MemberCost>,
    pub members: Vec<MemberRecord>,
}

impl TileRecord {
    pub fn member(&self, v: Variant) -> Option<&MemberRecord> {
        self.members.iter().find(|m| m.variant == v)
    }

    pub fn chosen_member(&self) -> Option<&MemberRecord> {
        self.chosen.and_then(|v| self.member(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QtGainMode {
    /// Label-1 pixels captured by each tiling over those of all center tiles.
    #[default]
    Captured,
    /// Mean label-1 fraction of each tiling's tiles.
    PerTileMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineParams {
    pub t_bg: f64,
    pub t_art: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self { t_bg: 0.5, t_art: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ReportParams {
    pub baseline: BaselineParams,
    pub qt_gain_mode: QtGainMode,
    /// Mosaic downsample; chosen from the ROI size when absent.
    pub mosaic_downsample: Option<u32>,
}

pub fn auto_downsample(roi: &TissueRoi) -> u32 {
    roi.width().max(roi.height()).div_ceil(4096).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub background: u64,
    pub qualified: u64,
    pub fold: u64,
    pub blur: u64,
}

impl From<[u64; NUM_LABELS]> for LabelCounts {
    fn from(c: [u64; NUM_LABELS]) -> Self {
        LabelCounts {
            background: c[0],
            qualified: c[1],
            fold: c[2],
            blur: c[3],
        }
    }
}

impl LabelCounts {
    pub fn as_array(&self) -> [u64; NUM_LABELS] {
        [self.background, self.qualified, self.fold, self.blur]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QtSummary {
    pub mode: QtGainMode,
    pub standard_tiles: u32,
    pub proposed_tiles: u32,
    /// Percent of qualified tissue captured by each tiling.
    pub standard_percent: Option<f64>,
    pub proposed_percent: Option<f64>,
    /// Absent when the standard tiling captures no qualified tissue.
    pub gain_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_total: u32,
    pub n_records: u32,
    pub n_discarded_pen: u32,
    pub n_rejected_cost: u32,
    pub n_pen_removed_tiles: u32,
    pub n_cleaning_warnings: u32,
    pub discarded_sets: Vec<u32>,
    pub mosaic_downsample: u32,
    /// Label pixels in the mosaic.
    pub label_pixels: LabelCounts,
    pub qt: QtSummary,
    /// Summed pairwise intersection area of chosen tiles, level-0 pixels.
    pub overlap_area: u64,
}

pub fn render_mask(mask: &LabelMask) -> RasterRgb {
    let bytes = mask.labels().iter().flat_map(|&l| PALETTE[l as usize]).collect();
    RasterRgb::new(mask.width(), mask.height(), bytes).expect("same dims")
}

/// Slide-level label mosaic over the ROI, one pixel per `d`×`d` block of
/// level-0 pixels sampled at the block's top-left corner.
pub struct Mosaic {
    roi: TissueRoi,
    d: u32,
    plane: Plane,
}

impl Mosaic {
    pub fn new(roi: &TissueRoi, downsample: u32) -> Mosaic {
        let d = downsample.max(1);
        Mosaic {
            roi: *roi,
            d,
            plane: Plane::filled(roi.width().div_ceil(d), roi.height().div_ceil(d), BACKGROUND),
        }
    }

    pub fn downsample(&self) -> u32 {
        self.d
    }

    /// Mosaic index range whose sample points fall in `[lo, lo+len)`.
    fn span(origin: i64, d: i64, lo: i64, len: i64, n: u32) -> (u32, u32) {
        let first = (lo - origin).max(0);
        let a = (first + d - 1) / d;
        let b = ((lo + len - origin) + d - 1).max(0) / d;
        (a.min(n as i64) as u32, b.min(n as i64) as u32)
    }

    /// Paints a tile mask; later paints win where tiles overlap.
    pub fn paint(&mut self, tile: &TileRef, mask: &LabelMask) {
        let d = self.d as i64;
        let (ox, oy) = (self.roi.x0 as i64, self.roi.y0 as i64);
        let (mx0, mx1) = Self::span(ox, d, tile.x, mask.width() as i64, self.plane.width());
        let (my0, my1) = Self::span(oy, d, tile.y, mask.height() as i64, self.plane.height());
        for my in my0..my1 {
            let ty = (oy + my as i64 * d - tile.y) as u32;
            for mx in mx0..mx1 {
                let tx = (ox + mx as i64 * d - tile.x) as u32;
                self.plane.set(mx, my, mask.get(tx, ty));
            }
        }
    }

    pub fn into_mask(self) -> LabelMask {
        LabelMask::from_plane(self.plane).expect("only labels painted")
    }
}

/// Paints chosen tiles in ascending set_index order.
pub fn compose_wsi_mask<'a, I>(roi: &TissueRoi, downsample: u32, chosen: I) -> LabelMask
where
    I: IntoIterator<Item = (TileRef, &'a LabelMask)>,
{
    let mut tiles: Vec<(TileRef, &LabelMask)> = chosen.into_iter().collect();
    tiles.sort_by_key(|(t, _)| t.set_index);
    let mut m = Mosaic::new(roi, downsample);
    for (t, mask) in tiles {
        m.paint(&t, mask);
    }
    m.into_mask()
}

pub fn baseline_keeps(f: &ArtifactFractions, p: &BaselineParams) -> bool {
    f.p_bg < p.t_bg && f.p_fo + f.p_bl < p.t_art
}

/// Set indices whose center tile standard tiling would keep.
pub fn standard_baseline(centers: &[(u32, ArtifactFractions)], p: &BaselineParams) -> Vec<u32> {
    centers
        .iter()
        .filter(|(_, f)| baseline_keeps(f, p))
        .map(|(s, _)| *s)
        .collect()
}

/// Per-set inputs to the gain; `center` is absent when the center tile was
/// removed for pen marks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QtEntry {
    pub center: Option<(ArtifactFractions, u64)>,
    pub chosen: Option<(ArtifactFractions, u64)>,
}

impl QtEntry {
    pub fn from_record(r: &TileRecord) -> QtEntry {
        let pick = |m: Option<&MemberRecord>| m.and_then(|m| Some((m.fractions?, m.qualified_px?)));
        QtEntry {
            center: pick(r.member(Variant::C)),
            chosen: pick(r.chosen_member()),
        }
    }
}

fn percent_change(proposed: f64, standard: f64) -> Option<f64> {
    (standard > 0.0).then(|| (proposed - standard) / standard * 100.0)
}

pub fn qt_gain(entries: &[QtEntry], baseline: &BaselineParams, mode: QtGainMode) -> QtSummary {
    let standard: Vec<(ArtifactFractions, u64)> = entries
        .iter()
        .filter_map(|e| e.center)
        .filter(|(f, _)| baseline_keeps(f, baseline))
        .collect();
    let proposed: Vec<(ArtifactFractions, u64)> = entries.iter().filter_map(|e| e.chosen).collect();
    let (std_pct, prop_pct) = match mode {
        QtGainMode::Captured => {
            let total: u64 = entries.iter().filter_map(|e| e.center).map(|(_, q)| q).sum();
            let share = |v: &[(ArtifactFractions, u64)]| {
                (total > 0).then(|| v.iter().map(|(_, q)| *q).sum::<u64>() as f64 / total as f64 * 100.0)
            };
            (share(&standard), share(&proposed))
        }
        QtGainMode::PerTileMean => {
            let mean = |v: &[(ArtifactFractions, u64)]| {
                (!v.is_empty()).then(|| v.iter().map(|(f, _)| f.p_qt).sum::<f64>() / v.len() as f64 * 100.0)
            };
            (mean(&standard), mean(&proposed))
        }
    };
    let gain = match (prop_pct, std_pct) {
        (Some(p), Some(s)) => percent_change(p, s),
        (None, Some(s)) => percent_change(0.0, s),
        _ => None,
    };
    QtSummary {
        mode,
        standard_tiles: standard.len() as u32,
        proposed_tiles: proposed.len() as u32,
        standard_percent: std_pct,
        proposed_percent: prop_pct,
        gain_percent: gain,
    }
}

/// Summed pairwise intersection of the given tiles. Tiles more than two
/// cells apart never meet, so only nearby cells are compared.
pub fn chosen_overlap_area(grid: &TileGrid, chosen: &[TileRef]) -> u64 {
    let mut sorted: Vec<&TileRef> = chosen.iter().collect();
    sorted.sort_by_key(|t| t.set_index);
    let mut total = 0;
    for (i, a) in sorted.iter().enumerate() {
        let (ra, ca) = grid.cell(a.set_index);
        for b in &sorted[i + 1..] {
            let (rb, cb) = grid.cell(b.set_index);
            if rb > ra + 2 {
                break;
            }
            if ca.abs_diff(cb) <= 2 {
                total += a.overlap_area(b);
            }
        }
    }
    total
}

/// Tile placement of a record's chosen member.
pub fn chosen_tile(grid: &TileGrid, r: &TileRecord) -> Option<TileRef> {
    let m = r.chosen_member()?;
    Some(TileRef {
        set_index: r.set_index,
        variant: m.variant,
        x: m.x,
        y: m.y,
        width: grid.tile_w,
        height: grid.tile_h,
    })
}

/// Run statistics from the final records and mosaic.
pub fn run_stats(
    grid: &TileGrid,
    records: &[TileRecord],
    discarded_sets: &[u32],
    mosaic: &LabelMask,
    mosaic_downsample: u32,
    params: &ReportParams,
) -> RunStats {
    let entries: Vec<QtEntry> = records.iter().map(QtEntry::from_record).collect();
    let chosen: Vec<TileRef> = records.iter().filter_map(|r| chosen_tile(grid, r)).collect();
    let members = records.iter().flat_map(|r| &r.members);
    RunStats {
        n_total: grid.len(),
        n_records: records.len() as u32,
        n_discarded_pen: discarded_sets.len() as u32,
        n_rejected_cost: records.iter().filter(|r| r.chosen.is_none()).count() as u32,
        n_pen_removed_tiles: members.clone().filter(|m| m.pen_class == PenClass::High).count() as u32,
        n_cleaning_warnings: members.filter(|m| m.warning.is_some()).count() as u32,
        discarded_sets: discarded_sets.to_vec(),
        mosaic_downsample,
        label_pixels: mosaic.counts().into(),
        qt: qt_gain(&entries, &params.baseline, params.qt_gain_mode),
        overlap_area: chosen_overlap_area(grid, &chosen),
    }
}

pub fn tile_png_name(set_index: u32, v: Variant) -> String {
    format!("tile_{set_index}_{v}.png")
}

/// Writes report files into a directory, leaving [`PARTIAL_MARKER`] behind
/// if anything fails before [`OutputWriter::finish`].
pub struct OutputWriter {
    dir: PathBuf,
}

impl OutputWriter {
    pub fn begin(dir: &Path) -> Result<OutputWriter> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let marker = dir.join(PARTIAL_MARKER);
        fs::write(&marker, b"run did not complete\n").map_err(|e| Error::io(&marker, e))?;
        Ok(OutputWriter { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_tile(&self, set_index: u32, v: Variant, raster: &RasterRgb) -> Result<()> {
        raster.save_png(&self.dir.join(tile_png_name(set_index, v)))
    }

    pub fn finish(self, records: &[TileRecord], stats: &RunStats, mosaic: &LabelMask) -> Result<()> {
        write_manifest(&self.dir.join("manifest.jsonl"), records)?;
        let stats_path = self.dir.join("stats.json");
        let mut json = serde_json::to_string_pretty(stats)?;
        json.push('\n');
        fs::write(&stats_path, json).map_err(|e| Error::io(&stats_path, e))?;
        render_mask(mosaic).save_png(&self.dir.join("mosaic.png"))?;
        let counts_path = self.dir.join("label_counts.csv");
        let mut csv = String::from("label,pixels\n");
        for (label, n) in stats.label_pixels.as_array().iter().enumerate() {
            csv.push_str(&format!("{label},{n}\n"));
        }
        fs::write(&counts_path, csv).map_err(|e| Error::io(&counts_path, e))?;
        let marker = self.dir.join(PARTIAL_MARKER);
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))
    }
}

pub fn write_outputs(dir: &Path, records: &[TileRecord], stats: &RunStats, mosaic: &LabelMask) -> Result<()> {
    OutputWriter::begin(dir)?.finish(records, stats, mosaic)
}

pub fn write_manifest(path: &Path, records: &[TileRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{FOLD, QUALIFIED};
    use crate::tiler::plan_grid;

    fn roi(w: u32, h: u32) -> TissueRoi {
        TissueRoi {
            x0: 0,
            y0: 0,
            x1: w,
            y1: h,
            scale_x: 1.0,
            scale_y: 1.0,
        }
    }

    fn tile(set_index: u32, x: i64, y: i64, w: u32, h: u32) -> TileRef {
        TileRef {
            set_index,
            variant: Variant::C,
            x,
            y,
            width: w,
            height: h,
        }
    }

    fn f(p_fo: f64, p_bl: f64, p_bg: f64) -> ArtifactFractions {
        ArtifactFractions {
            p_fo,
            p_bl,
            p_bg,
            p_qt: 1.0 - p_fo - p_bl - p_bg,
        }
    }

    #[test]
    fn single_tile_mosaic_is_its_mask() {
        let mut p = Plane::filled(8, 6, QUALIFIED);
        p.set(3, 2, FOLD);
        let m = LabelMask::from_plane(p).unwrap();
        let out = compose_wsi_mask(&roi(8, 6), 1, [(tile(1, 0, 0, 8, 6), &m)]);
        assert_eq!(out, m);
    }

    #[test]
    fn later_set_wins_overlap() {
        let a = LabelMask::filled(6, 4, QUALIFIED);
        let b = LabelMask::filled(6, 4, FOLD);
        // Supplied out of order on purpose.
        let out = compose_wsi_mask(&roi(10, 4), 1, [(tile(2, 4, 0, 6, 4), &b), (tile(1, 0, 0, 6, 4), &a)]);
        for x in 0..10 {
            assert_eq!(out.get(x, 0), if x < 4 { QUALIFIED } else { FOLD }, "x={x}");
        }
    }

    #[test]
    fn downsampled_paint_samples_block_corners() {
        let mut p = Plane::filled(4, 4, QUALIFIED);
        p.set(2, 2, FOLD);
        let m = LabelMask::from_plane(p).unwrap();
        let out = compose_wsi_mask(&roi(5, 5), 2, [(tile(1, 0, 0, 4, 4), &m)]);
        assert_eq!((out.width(), out.height()), (3, 3));
        assert_eq!(out.get(1, 1), FOLD);
        assert_eq!(out.get(0, 0), QUALIFIED);
        assert_eq!(out.get(2, 2), BACKGROUND);
    }

    #[test]
    fn neighbour_beyond_roi_origin_is_clipped() {
        let m = LabelMask::filled(4, 4, FOLD);
        let out = compose_wsi_mask(&roi(4, 4), 1, [(tile(1, -2, -1, 4, 4), &m)]);
        assert_eq!(out.count(FOLD), 2 * 3);
        assert_eq!(out.get(1, 2), FOLD);
    }

    #[test]
    fn palette_colours() {
        let g = render_mask(&LabelMask::filled(2, 2, QUALIFIED));
        assert!(g.pixels().all(|p| p == [0, 170, 0]));
        let b = render_mask(&LabelMask::filled(2, 2, BACKGROUND));
        assert!(b.pixels().all(|p| p == [0, 0, 0]));
        let mut distinct = PALETTE.to_vec();
        distinct.dedup();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn baseline_rules() {
        let p = BaselineParams::default();
        let kept = standard_baseline(&[(1, f(0.0, 0.0, 0.9)), (2, f(0.0, 0.0, 0.0)), (3, f(0.2, 0.0, 0.0))], &p);
        assert_eq!(kept, vec![2]);
    }

    #[test]
    fn identical_choices_give_zero_gain() {
        let e = QtEntry {
            center: Some((f(0.0, 0.0, 0.0), 100)),
            chosen: Some((f(0.0, 0.0, 0.0), 100)),
        };
        for mode in [QtGainMode::Captured, QtGainMode::PerTileMean] {
            assert_eq!(qt_gain(&[e, e], &BaselineParams::default(), mode).gain_percent, Some(0.0));
        }
    }

    #[test]
    fn shifted_choice_gains() {
        // Center rejected by baseline (fold 20%), neighbour choice captures more.
        let e1 = QtEntry {
            center: Some((f(0.2, 0.0, 0.0), 80)),
            chosen: Some((f(0.0, 0.0, 0.0), 100)),
        };
        let e2 = QtEntry {
            center: Some((f(0.0, 0.0, 0.0), 100)),
            chosen: Some((f(0.0, 0.0, 0.0), 100)),
        };
        let s = qt_gain(&[e1, e2], &BaselineParams::default(), QtGainMode::Captured);
        assert_eq!(s.standard_percent, Some(100.0 * 100.0 / 180.0));
        assert!((s.gain_percent.unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_baseline_tissue_is_undefined_gain() {
        let e = QtEntry {
            center: Some((f(0.0, 0.0, 1.0), 0)),
            chosen: Some((f(0.0, 0.0, 1.0), 0)),
        };
        assert_eq!(qt_gain(&[e], &BaselineParams::default(), QtGainMode::Captured).gain_percent, None);
    }

    #[test]
    fn overlap_area_counts_nearby_pairs() {
        let grid = plan_grid(&roi(40, 10), 10, 10, 0.25).unwrap();
        let a = TileRef { variant: Variant::R, x: 8, ..grid.center(1) };
        let b = TileRef { variant: Variant::L, x: 12, ..grid.center(2) };
        let c = grid.center(4);
        assert_eq!(chosen_overlap_area(&grid, &[c, b, a]), 6 * 10);
    }

    #[test]
    fn outputs_round_trip_and_marker_removed() {
        let dir = tempfile::tempdir().unwrap();
        let grid = plan_grid(&roi(4, 4), 4, 4, 0.25).unwrap();
        let records = vec![TileRecord {
            set_index: 1,
            chosen: Some(Variant::C),
            x: Some(0),
            y: Some(0),
            cost: 0.0,
            fractions: Some(f(0.0, 0.0, 0.0)),
            costs: vec![MemberCost { variant: Variant::C, cost: 0.0 }],
            members: vec![MemberRecord {
                variant: Variant::C,
                x: 0,
                y: 0,
                pen_class: PenClass::Low,
                pen: PenStats::default(),
                cleaned: false,
                warning: None,
                fractions: Some(f(0.0, 0.0, 0.0)),
                qualified_px: Some(16),
            }],
        }];
        let mosaic = LabelMask::filled(4, 4, QUALIFIED);
        let stats = run_stats(&grid, &records, &[], &mosaic, 1, &ReportParams::default());
        assert_eq!(stats.label_pixels.qualified, 16);
        write_outputs(dir.path(), &records, &stats, &mosaic).unwrap();
        assert!(!dir.path().join(PARTIAL_MARKER).exists());
        assert_eq!(read_manifest(&dir.path().join("manifest.jsonl")).unwrap(), records);
        let csv = fs::read_to_string(dir.path().join("label_counts.csv")).unwrap();
        assert_eq!(csv, "label,pixels\n0,0\n1,16\n2,0\n3,0\n");
    }
}
