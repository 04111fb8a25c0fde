//! Pen-marking quantification, triage and cleaning.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterRgb, WHITE};
use crate::segment::SidecarPool;
use crate::tiler::{TileMember, TileSet, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenColor {
    Dark,
    Red,
    Green,
    Blue,
}

/// Per-pixel colour cutoffs. A pixel is dark when its brightest channel is
/// below `dark_max`; otherwise it is red/green/blue when that channel beats
/// both others by more than `margin` and exceeds `min_channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenPixelRules {
    pub dark_max: u8,
    pub margin: u8,
    pub min_channel: u8,
}

impl Default for PenPixelRules {
    fn default() -> Self {
        Self {
            dark_max: 60,
            margin: 50,
            min_channel: 100,
        }
    }
}

impl PenPixelRules {
    pub fn classify(&self, [r, g, b]: [u8; 3]) -> Option<PenColor> {
        let (r, g, b) = (r as i32, g as i32, b as i32);
        let (margin, min) = (self.margin as i32, self.min_channel as i32);
        if r.max(g).max(b) < self.dark_max as i32 {
            Some(PenColor::Dark)
        } else if r - g.max(b) > margin && r > min {
            Some(PenColor::Red)
        } else if g - r.max(b) > margin && g > min {
            Some(PenColor::Green)
        } else if b - r.max(g) > margin && b > min {
            Some(PenColor::Blue)
        } else {
            None
        }
    }

    pub fn is_pen(&self, p: [u8; 3]) -> bool {
        self.classify(p).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenStats {
    pub p_red: f64,
    pub p_green: f64,
    pub p_blue: f64,
    pub p_dark: f64,
}

impl PenStats {
    pub fn max(&self) -> f64 {
        self.p_red.max(self.p_green).max(self.p_blue).max(self.p_dark)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenThresholds {
    pub p_max: f64,
    pub p_min: f64,
}

impl Default for PenThresholds {
    fn default() -> Self {
        Self { p_max: 0.9, p_min: 0.2 }
    }
}

impl PenThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_min && self.p_min < self.p_max && self.p_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pen thresholds need 0 <= p_min < p_max <= 1, got p_min={} p_max={}",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenClass {
    Low,
    Medium,
    High,
}

pub fn pen_stats_with(tile: &RasterRgb, rules: &PenPixelRules) -> PenStats {
    let mut n = [0u64; 4];
    for p in tile.pixels() {
        match rules.classify(p) {
            Some(PenColor::Red) => n[0] += 1,
            Some(PenColor::Green) => n[1] += 1,
            Some(PenColor::Blue) => n[2] += 1,
            Some(PenColor::Dark) => n[3] += 1,
            None => {}
        }
    }
    let total = tile.len_pixels().max(1) as f64;
    PenStats {
        p_red: n[0] as f64 / total,
        p_green: n[1] as f64 / total,
        p_blue: n[2] as f64 / total,
        p_dark: n[3] as f64 / total,
    }
}

pub fn pen_stats(tile: &RasterRgb) -> PenStats {
    pen_stats_with(tile, &PenPixelRules::default())
}

pub fn classify_pen(stats: &PenStats, th: &PenThresholds) -> PenClass {
    let m = stats.max();
    if m > th.p_max {
        PenClass::High
    } else if m > th.p_min {
        PenClass::Medium
    } else {
        PenClass::Low
    }
}

/// Replaces pen pixels by the mean of the non-pen pixels in the smallest
/// square window whose mean is itself not a pen colour. Tiles without any
/// non-pen pixel come back white.
pub fn fill_clean(tile: &RasterRgb, rules: &PenPixelRules) -> RasterRgb {
    let (w, h) = (tile.width() as usize, tile.height() as usize);
    let pen: Vec<bool> = tile.pixels().map(|p| rules.is_pen(p)).collect();
    if !pen.iter().any(|&p| p) {
        return tile.clone();
    }
    if pen.iter().all(|&p| p) {
        return RasterRgb::filled(tile.width(), tile.height(), WHITE);
    }

    // Integral images over non-pen pixels: count and per-channel sums.
    let stride = w + 1;
    let mut integ = vec![[0u64; 4]; stride * (h + 1)];
    for y in 0..h {
        let mut row = [0u64; 4];
        for x in 0..w {
            if !pen[y * w + x] {
                let p = tile.get(x as u32, y as u32);
                row[0] += 1;
                row[1] += p[0] as u64;
                row[2] += p[1] as u64;
                row[3] += p[2] as u64;
            }
            let above = integ[y * stride + x + 1];
            integ[(y + 1) * stride + x + 1] = [0, 1, 2, 3].map(|k| above[k] + row[k]);
        }
    }
    let window = |x0: usize, y0: usize, x1: usize, y1: usize| {
        let (a, b, c, d) = (
            integ[y1 * stride + x1],
            integ[y0 * stride + x1],
            integ[y1 * stride + x0],
            integ[y0 * stride + x0],
        );
        [0, 1, 2, 3].map(|k| a[k] + d[k] - b[k] - c[k])
    };

    let mut out = tile.clone();
    let max_r = w.max(h);
    for y in 0..h {
        for x in 0..w {
            if !pen[y * w + x] {
                continue;
            }
            let mut fill = None;
            let mut fallback = None;
            for r in 1..=max_r {
                let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
                let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
                let s = window(x0, y0, x1, y1);
                if s[0] == 0 {
                    continue;
                }
                let mean = [1, 2, 3].map(|k| ((s[k] + s[0] / 2) / s[0]) as u8);
                if !rules.is_pen(mean) {
                    fill = Some(mean);
                    break;
                }
                if fallback.is_none() {
                    fallback = first_clean(tile, &pen, w, x0, y0, x1, y1);
                }
            }
            let p = fill.or(fallback).unwrap_or(WHITE);
            out.put(x as u32, y as u32, p);
        }
    }
    out
}

fn first_clean(tile: &RasterRgb, pen: &[bool], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Option<[u8; 3]> {
    (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| (x, y)))
        .find(|&(x, y)| !pen[y * w + x])
        .map(|(x, y)| tile.get(x as u32, y as u32))
}

fn default_timeout() -> f64 {
    30.0
}

fn default_processes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CleaningBackend {
    None,
    #[default]
    Fill,
    Sidecar {
        command: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_processes")]
        processes: usize,
    },
}

/// A configured cleaning backend.
pub enum Cleaner {
    None,
    Fill(PenPixelRules),
    Sidecar(SidecarPool),
}

impl Cleaner {
    pub fn from_config(cfg: &CleaningBackend, rules: &PenPixelRules) -> Result<Cleaner> {
        Ok(match cfg {
            CleaningBackend::None => Cleaner::None,
            CleaningBackend::Fill => Cleaner::Fill(*rules),
            CleaningBackend::Sidecar {
                command,
                timeout_secs,
                processes,
            } => {
                if !(*timeout_secs > 0.0) {
                    return Err(Error::InvalidConfig("cleaning timeout must be positive".into()));
                }
                Cleaner::Sidecar(SidecarPool::new(
                    command,
                    *processes,
                    Duration::from_secs_f64(*timeout_secs),
                ))
            }
        })
    }

    pub fn clean(&self, tile: &RasterRgb, tile_id: u64) -> Result<RasterRgb> {
        match self {
            Cleaner::None => Ok(tile.clone()),
            Cleaner::Fill(rules) => Ok(fill_clean(tile, rules)),
            Cleaner::Sidecar(pool) => pool
                .clean(tile, tile_id)
                .map_err(|e| Error::CleaningBackendFailure(e.to_string())),
        }
    }
}

pub fn clean_tile(tile: &RasterRgb, backend: &CleaningBackend) -> Result<RasterRgb> {
    Cleaner::from_config(backend, &PenPixelRules::default())?.clean(tile, 0)
}

#[derive(Debug, Clone)]
pub struct TriagedMember {
    pub member: TileMember,
    pub stats: PenStats,
    pub class: PenClass,
    /// Set when cleaning failed and the tile was kept as read.
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TriagedSet {
    pub set_index: u32,
    pub members: Vec<TriagedMember>,
    /// High-pen members taken out of the set.
    pub removed: Vec<(Variant, PenStats)>,
}

#[derive(Debug, Clone)]
pub enum SetOutcome {
    /// Every member was High.
    Discarded { set_index: u32, stats: Vec<(Variant, PenStats)> },
    Kept(TriagedSet),
}

impl SetOutcome {
    pub fn set_index(&self) -> u32 {
        match self {
            SetOutcome::Discarded { set_index, .. } => *set_index,
            SetOutcome::Kept(s) => s.set_index,
        }
    }
}

/// Removes High tiles, drops sets that are entirely High and cleans the rest.
pub fn triage_set(set: TileSet, th: &PenThresholds, rules: &PenPixelRules, cleaner: &Cleaner) -> SetOutcome {
    let scored: Vec<(TileMember, PenStats, PenClass)> = set
        .members
        .into_iter()
        .map(|m| {
            let stats = pen_stats_with(&m.raster, rules);
            let class = classify_pen(&stats, th);
            (m, stats, class)
        })
        .collect();
    if !scored.is_empty() && scored.iter().all(|(_, _, c)| *c == PenClass::High) {
        return SetOutcome::Discarded {
            set_index: set.set_index,
            stats: scored.iter().map(|(m, s, _)| (m.tile.variant, *s)).collect(),
        };
    }
    let mut removed = Vec::new();
    let mut members = Vec::new();
    for (mut m, stats, class) in scored {
        if class == PenClass::High {
            removed.push((m.tile.variant, stats));
            continue;
        }
        let mut warning = None;
        match cleaner.clean(&m.raster, m.tile.tile_id()) {
            Ok(clean) => m.raster = clean,
            Err(e) => {
                log::warn!("set {} tile {}: {e}; keeping uncleaned tile", set.set_index, m.tile.variant);
                warning = Some(e.to_string());
            }
        }
        members.push(TriagedMember {
            member: m,
            stats,
            class,
            warning,
        });
    }
    SetOutcome::Kept(TriagedSet {
        set_index: set.set_index,
        members,
        removed,
    })
}

/// Applies [`triage_set`] to a stream of sets, preserving order.
pub fn filter_sets<'a, I>(
    sets: I,
    th: &'a PenThresholds,
    rules: &'a PenPixelRules,
    cleaner: &'a Cleaner,
) -> impl Iterator<Item = SetOutcome> + 'a
where
    I: IntoIterator<Item = TileSet> + 'a,
{
    sets.into_iter().map(move |s| triage_set(s, th, rules, cleaner))
}
