//! End-to-end orchestration, single-shot or as separate stages.
//!
//! A run directory holds the interchange files between stages:
//!
//! ```text
//! plan.json                     slide, ROI, grid, config
//! tiles.jsonl                   one TileSetEntry per set (pen triage)
//! tiles/tile_<set>_<variant>.png cleaned, non-High members
//! masks/<tile_id>.png           label masks
//! selections.jsonl              one TileRecord per surviving set
//! manifest.jsonl stats.json mosaic.png label_counts.csv
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::penmark::{triage_set, Cleaner, CleaningBackend, PenClass, PenStats, SetOutcome, TriagedSet};
use crate::raster::RasterRgb;
use crate::report::{
    auto_downsample, chosen_tile, read_manifest, run_stats, tile_png_name, write_manifest, MemberRecord, Mosaic,
    OutputWriter, RunStats, TileRecord,
};
use crate::segment::{mask_path, LabelMask, Segmenter, QUALIFIED};
use crate::selector::{select_by_counts, ArtifactFractions};
use crate::slide::{open_slide, SlideImage};
use crate::tiler::{extract_sets, plan_grid, TileGrid, TileRef, Variant, Workers};
use crate::tissue::{compute_tissue_mask, roi_from_mask, TissueRoi};

pub const PLAN_FILE: &str = "plan.json";
pub const TILES_FILE: &str = "tiles.jsonl";
pub const TILES_DIR: &str = "tiles";
pub const MASKS_DIR: &str = "masks";
pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub slide: PathBuf,
    pub width0: u32,
    pub height0: u32,
    pub thumbnail_w: u32,
    pub thumbnail_h: u32,
    /// Tissue pixels in the thumbnail mask.
    pub tissue_px: u64,
    pub roi: TissueRoi,
    pub grid: TileGrid,
    pub config: PipelineConfig,
}

impl RunPlan {
    pub fn load(run_dir: &Path) -> Result<RunPlan> {
        let path = run_dir.join(PLAN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(PLAN_FILE);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn mosaic_downsample(&self) -> u32 {
        self.config
            .report
            .mosaic_downsample
            .unwrap_or_else(|| auto_downsample(&self.roi))
    }
}

/// Pen triage outcome of one member, as recorded in `tiles.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberInfo {
    pub variant: Variant,
    pub x: i64,
    pub y: i64,
    pub pen_class: PenClass,
    pub pen: PenStats,
    pub cleaned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MemberInfo {
    pub fn tile(&self, set_index: u32, grid: &TileGrid) -> TileRef {
        TileRef {
            set_index,
            variant: self.variant,
            x: self.x,
            y: self.y,
            width: grid.tile_w,
            height: grid.tile_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSetEntry {
    pub set_index: u32,
    pub discarded: bool,
    pub members: Vec<MemberInfo>,
}

fn entry_from_outcome(outcome: &SetOutcome, grid: &TileGrid, cleaning: &CleaningBackend) -> TileSetEntry {
    let place = |set_index: u32, v: Variant| {
        grid.set_members(set_index)
            .into_iter()
            .find(|t| t.variant == v)
            .expect("variant belongs to the set")
    };
    match outcome {
        SetOutcome::Discarded { set_index, stats } => TileSetEntry {
            set_index: *set_index,
            discarded: true,
            members: stats
                .iter()
                .map(|(v, s)| {
                    let t = place(*set_index, *v);
                    MemberInfo {
                        variant: *v,
                        x: t.x,
                        y: t.y,
                        pen_class: PenClass::High,
                        pen: *s,
                        cleaned: false,
                        warning: None,
                    }
                })
                .collect(),
        },
        SetOutcome::Kept(set) => {
            let mut members: Vec<MemberInfo> = set
                .members
                .iter()
                .map(|m| MemberInfo {
                    variant: m.member.tile.variant,
                    x: m.member.tile.x,
                    y: m.member.tile.y,
                    pen_class: m.class,
                    pen: m.stats,
                    cleaned: m.warning.is_none() && *cleaning != CleaningBackend::None,
                    warning: m.warning.clone(),
                })
                .collect();
            for (v, s) in &set.removed {
                let t = place(set.set_index, *v);
                members.push(MemberInfo {
                    variant: *v,
                    x: t.x,
                    y: t.y,
                    pen_class: PenClass::High,
                    pen: *s,
                    cleaned: false,
                    warning: None,
                });
            }
            members.sort_by_key(|m| m.variant);
            TileSetEntry {
                set_index: set.set_index,
                discarded: false,
                members,
            }
        }
    }
}

/// Builds a set's record from its members and the masks of the non-High ones.
pub fn build_record(entry: &TileSetEntry, masks: &HashMap<Variant, LabelMask>, cfg: &PipelineConfig) -> Result<TileRecord> {
    let mut scored = Vec::new();
    let mut members = Vec::with_capacity(entry.members.len());
    for m in &entry.members {
        let (f, q) = match masks.get(&m.variant) {
            Some(mask) => {
                let counts = mask.counts();
                scored.push((m.variant, counts));
                (Some(ArtifactFractions::from_counts(counts)), Some(counts[QUALIFIED as usize]))
            }
            None => (None, None),
        };
        members.push(MemberRecord {
            variant: m.variant,
            x: m.x,
            y: m.y,
            pen_class: m.pen_class,
            pen: m.pen,
            cleaned: m.cleaned,
            warning: m.warning.clone(),
            fractions: f,
            qualified_px: q,
        });
    }
    let sel = select_by_counts(entry.set_index, &scored, &cfg.weights, cfg.c_max)?;
    let chosen = sel.chosen.and_then(|v| members.iter().find(|m| m.variant == v));
    Ok(TileRecord {
        set_index: entry.set_index,
        chosen: sel.chosen,
        x: chosen.map(|m| m.x),
        y: chosen.map(|m| m.y),
        cost: sel.cost,
        fractions: sel.fractions,
        costs: sel.costs,
        members,
    })
}

/// Thumbnail, tissue mask, ROI and grid for a slide.
pub fn plan_run(slide: &SlideImage, cfg: &PipelineConfig) -> Result<RunPlan> {
    cfg.validate()?;
    let tw = cfg.thumbnail_size.min(slide.width0()).max(1);
    let th = cfg.thumbnail_size.min(slide.height0()).max(1);
    let thumb = slide.thumbnail(tw, th).map_err(|e| e.in_stage("thumbnail", None))?;
    let mask = compute_tissue_mask(&thumb, &cfg.tissue);
    let roi = roi_from_mask(&mask, slide).map_err(|e| e.in_stage("tissue", None))?;
    let grid = plan_grid(&roi, cfg.tile_w, cfg.tile_h, cfg.overlap).map_err(|e| e.in_stage("tile", None))?;
    let path = slide.path();
    Ok(RunPlan {
        slide: fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
        width0: slide.width0(),
        height0: slide.height0(),
        thumbnail_w: tw,
        thumbnail_h: th,
        tissue_px: mask.count() as u64,
        roi,
        grid,
        config: cfg.clone(),
    })
}

struct Stages {
    cleaner: Cleaner,
    segmenter: Segmenter,
}

impl Stages {
    fn new(cfg: &PipelineConfig) -> Result<Stages> {
        Ok(Stages {
            cleaner: Cleaner::from_config(&cfg.cleaning, &cfg.pen_rules)?,
            segmenter: Segmenter::from_config(&cfg.segmentation)?,
        })
    }
}

fn segment_set(set: &TriagedSet, segmenter: &Segmenter) -> Result<HashMap<Variant, LabelMask>> {
    set.members
        .iter()
        .map(|m| {
            let t = &m.member.tile;
            let mask = segmenter
                .segment(&m.member.raster, t.tile_id())
                .map_err(|e| e.in_stage("segment", Some(set.set_index)))?;
            Ok((t.variant, mask))
        })
        .collect()
}

/// What single-shot processing keeps of a set once it leaves the worker.
struct SetDone {
    entry: TileSetEntry,
    record: Option<TileRecord>,
    masks: HashMap<Variant, LabelMask>,
    rasters: HashMap<Variant, RasterRgb>,
}

fn finish_set(outcome: SetOutcome, grid: &TileGrid, stages: &Stages, cfg: &PipelineConfig) -> Result<SetDone> {
    let entry = entry_from_outcome(&outcome, grid, &cfg.cleaning);
    let SetOutcome::Kept(set) = outcome else {
        return Ok(SetDone {
            entry,
            record: None,
            masks: HashMap::new(),
            rasters: HashMap::new(),
        });
    };
    let masks = segment_set(&set, &stages.segmenter)?;
    let record = build_record(&entry, &masks, cfg).map_err(|e| e.in_stage("select", Some(set.set_index)))?;
    let rasters = set
        .members
        .into_iter()
        .map(|m| (m.member.tile.variant, m.member.raster))
        .collect();
    Ok(SetDone {
        entry,
        record: Some(record),
        masks,
        rasters,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub plan: RunPlan,
    pub records: Vec<TileRecord>,
    pub stats: RunStats,
}

/// Opens, plans, tiles, triages, segments, selects and reports in one pass.
pub fn run_pipeline(slide_path: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let slide = open_slide(slide_path)?;
    let plan = plan_run(&slide, cfg)?;
    let stages = Stages::new(cfg)?;
    let workers = Workers::new(cfg.workers)?;

    let writer = OutputWriter::begin(out_dir)?;
    plan.save(out_dir)?;
    if cfg.save_masks {
        mkdir(&out_dir.join(MASKS_DIR))?;
    }

    let grid = plan.grid;
    let d = plan.mosaic_downsample();
    let mut mosaic = Mosaic::new(&plan.roi, d);
    let mut entries = Vec::with_capacity(grid.len() as usize);
    let mut records = Vec::new();
    let mut stream = extract_sets(&slide, &grid, &workers);
    loop {
        let batch: Vec<_> = stream.by_ref().take(workers.batch_size()).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let done = workers.map_ordered(batch, |set| {
            let outcome = triage_set(set, &cfg.pen, &cfg.pen_rules, &stages.cleaner);
            finish_set(outcome, &grid, &stages, cfg)
        });
        for d in done {
            let d = d?;
            if let Some(r) = &d.record {
                if let (Some(tile), Some(v)) = (chosen_tile(&grid, r), r.chosen) {
                    mosaic.paint(&tile, &d.masks[&v]);
                    if cfg.save_tiles {
                        writer.write_tile(r.set_index, v, &d.rasters[&v])?;
                    }
                }
                if cfg.save_masks {
                    for m in &d.entry.members {
                        if let Some(mask) = d.masks.get(&m.variant) {
                            let id = m.tile(r.set_index, &grid).tile_id();
                            mask.save_png(&mask_path(&out_dir.join(MASKS_DIR), id))?;
                        }
                    }
                }
                records.push(d.record.unwrap());
            }
            entries.push(d.entry);
        }
    }
    write_jsonl(&out_dir.join(TILES_FILE), &entries)?;
    let discarded: Vec<u32> = entries.iter().filter(|e| e.discarded).map(|e| e.set_index).collect();
    let mosaic = mosaic.into_mask();
    let stats = run_stats(&grid, &records, &discarded, &mosaic, d, &cfg.report);
    writer
        .finish(&records, &stats, &mosaic)
        .map_err(|e| e.in_stage("report", None))?;
    Ok(RunOutput { plan, records, stats })
}

/// Stage 1: plan, extract and triage every set; writes cleaned tiles.
pub fn stage_tile(slide_path: &Path, cfg: &PipelineConfig, run_dir: &Path) -> Result<RunPlan> {
    cfg.validate()?;
    let slide = open_slide(slide_path)?;
    let plan = plan_run(&slide, cfg)?;
    let cleaner = Cleaner::from_config(&cfg.cleaning, &cfg.pen_rules)?;
    let workers = Workers::new(cfg.workers)?;
    plan.save(run_dir)?;
    let tiles_dir = run_dir.join(TILES_DIR);
    mkdir(&tiles_dir)?;

    let grid = plan.grid;
    let mut entries = Vec::with_capacity(grid.len() as usize);
    let mut stream = extract_sets(&slide, &grid, &workers);
    loop {
        let batch: Vec<_> = stream.by_ref().take(workers.batch_size()).collect::<Result<_>>()?;
        if batch.is_empty() {
            break;
        }
        let done = workers.map_ordered(batch, |set| -> Result<TileSetEntry> {
            let outcome = triage_set(set, &cfg.pen, &cfg.pen_rules, &cleaner);
            if let SetOutcome::Kept(s) = &outcome {
                for m in &s.members {
                    let t = &m.member.tile;
                    m.member.raster.save_png(&tiles_dir.join(tile_png_name(t.set_index, t.variant)))?;
                }
            }
            Ok(entry_from_outcome(&outcome, &grid, &cfg.cleaning))
        });
        for e in done {
            entries.push(e?);
        }
    }
    write_jsonl(&run_dir.join(TILES_FILE), &entries)?;
    Ok(plan)
}

pub fn read_tile_entries(run_dir: &Path) -> Result<Vec<TileSetEntry>> {
    read_jsonl(&run_dir.join(TILES_FILE))
}

fn load_tile(run_dir: &Path, set_index: u32, v: Variant) -> Result<RasterRgb> {
    let path = run_dir.join(TILES_DIR).join(tile_png_name(set_index, v));
    if !path.is_file() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "tile image missing; run the tile stage first"),
        ));
    }
    RasterRgb::load_png(&path)
}

/// Stage 2: segments every non-High tile into `masks/`.
pub fn stage_segment(run_dir: &Path, cfg: &PipelineConfig) -> Result<usize> {
    let plan = RunPlan::load(run_dir)?;
    let entries = read_tile_entries(run_dir)?;
    let segmenter = Segmenter::from_config(&cfg.segmentation)?;
    let workers = Workers::new(cfg.workers)?;
    let masks_dir = run_dir.join(MASKS_DIR);
    mkdir(&masks_dir)?;
    let jobs: Vec<(u32, &MemberInfo)> = entries
        .iter()
        .filter(|e| !e.discarded)
        .flat_map(|e| {
            e.members
                .iter()
                .filter(|m| m.pen_class != PenClass::High)
                .map(move |m| (e.set_index, m))
        })
        .collect();
    let n = jobs.len();
    let results = workers.map_ordered(jobs, |(set_index, m)| -> Result<()> {
        let tile = m.tile(set_index, &plan.grid);
        let raster = load_tile(run_dir, set_index, m.variant)?;
        let mask = segmenter
            .segment(&raster, tile.tile_id())
            .map_err(|e| e.in_stage("segment", Some(set_index)))?;
        mask.save_png(&mask_path(&masks_dir, tile.tile_id()))
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(n)
}

fn load_masks(run_dir: &Path, grid: &TileGrid, entry: &TileSetEntry) -> Result<HashMap<Variant, LabelMask>> {
    let dir = run_dir.join(MASKS_DIR);
    entry
        .members
        .iter()
        .filter(|m| m.pen_class != PenClass::High)
        .map(|m| {
            let id = m.tile(entry.set_index, grid).tile_id();
            let path = mask_path(&dir, id);
            if !path.is_file() {
                return Err(Error::MaskMissing { tile_id: id, path });
            }
            let mask = LabelMask::load_png(&path)?;
            if (mask.width(), mask.height()) != (grid.tile_w, grid.tile_h) {
                return Err(Error::MaskShapeMismatch(format!(
                    "{}: {}x{}, expected {}x{}",
                    path.display(),
                    mask.width(),
                    mask.height(),
                    grid.tile_w,
                    grid.tile_h
                )));
            }
            Ok((m.variant, mask))
        })
        .collect()
}

/// Stage 3: scores every surviving set from its masks.
pub fn stage_select(run_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<TileRecord>> {
    cfg.validate()?;
    let plan = RunPlan::load(run_dir)?;
    let entries = read_tile_entries(run_dir)?;
    let mut records = Vec::new();
    for e in entries.iter().filter(|e| !e.discarded) {
        let masks = load_masks(run_dir, &plan.grid, e).map_err(|err| err.in_stage("select", Some(e.set_index)))?;
        records.push(build_record(e, &masks, cfg).map_err(|err| err.in_stage("select", Some(e.set_index)))?);
    }
    write_manifest(&run_dir.join(SELECTIONS_FILE), &records)?;
    Ok(records)
}

/// Stage 4: mosaic, statistics and report files into `out_dir`.
pub fn stage_report(run_dir: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<RunOutput> {
    let plan = RunPlan::load(run_dir)?;
    let entries = read_tile_entries(run_dir)?;
    let records = read_manifest(&run_dir.join(SELECTIONS_FILE))?;
    let grid = plan.grid;
    let d = cfg.report.mosaic_downsample.unwrap_or_else(|| auto_downsample(&plan.roi));
    let writer = OutputWriter::begin(out_dir)?;
    let mut mosaic = Mosaic::new(&plan.roi, d);
    for r in &records {
        if let (Some(tile), Some(v)) = (chosen_tile(&grid, r), r.chosen) {
            let path = mask_path(&run_dir.join(MASKS_DIR), tile.tile_id());
            if !path.is_file() {
                return Err(Error::MaskMissing {
                    tile_id: tile.tile_id(),
                    path,
                }
                .in_stage("report", Some(r.set_index)));
            }
            mosaic.paint(&tile, &LabelMask::load_png(&path)?);
            if cfg.save_tiles {
                writer.write_tile(r.set_index, v, &load_tile(run_dir, r.set_index, v)?)?;
            }
        }
    }
    if out_dir != run_dir {
        plan.save(out_dir)?;
        write_jsonl(&out_dir.join(TILES_FILE), &entries)?;
    }
    let discarded: Vec<u32> = entries.iter().filter(|e| e.discarded).map(|e| e.set_index).collect();
    let mosaic = mosaic.into_mask();
    let stats = run_stats(&grid, &records, &discarded, &mosaic, d, &cfg.report);
    writer.finish(&records, &stats, &mosaic)?;
    Ok(RunOutput { plan, records, stats })
}
