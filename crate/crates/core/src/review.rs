//! Expert review harness: export a seeded sample of tile sets for blind
//! grading and score the returned answers against the pipeline's choices.
//!
//! Bundle layout:
//!
//! ```text
//! <out>/bundle.json
//! <out>/answers.csv                  wsi,set,choice (choice left blank)
//! <out>/review/<wsi>/set_<n>/<variant>.png
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penmark::PenClass;
use crate::pipeline::{RunPlan, MANIFEST_FILE};
use crate::report::{read_manifest, TileRecord};
use crate::slide::{open_slide, RegionSpec};
use crate::tiler::Variant;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const ANSWERS_FILE: &str = "answers.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewWsi {
    pub wsi: String,
    pub run_dir: PathBuf,
    pub sets: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewBundle {
    pub seed: u64,
    pub sets_per_wsi: usize,
    pub wsis: Vec<ReviewWsi>,
}

impl ReviewBundle {
    pub fn load(dir: &Path) -> Result<ReviewBundle> {
        let path = dir.join(BUNDLE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A reviewer's pick for one set; `None` means no acceptable tile.
pub type Choice = Option<Variant>;

pub fn parse_choice(s: &str) -> Option<Choice> {
    match s.trim() {
        "None" | "none" => Some(None),
        v => Variant::parse(v).map(Some),
    }
}

pub fn format_choice(c: Choice) -> &'static str {
    c.map_or("None", Variant::as_str)
}

/// Seeded sample of `k` set indices out of `available`, ascending.
pub fn sample_sets(available: &[u32], k: usize, seed: u64, wsi_index: usize) -> Result<Vec<u32>> {
    if available.len() < k {
        return Err(Error::InsufficientSets {
            requested: k,
            available: available.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (wsi_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, available.len(), k)
        .into_iter()
        .map(|i| available[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Writes the review bundle for `runs` (name, run directory) into `out`.
pub fn export_review(runs: &[(String, PathBuf)], sets_per_wsi: usize, seed: u64, out: &Path) -> Result<ReviewBundle> {
    let mut wsis = Vec::with_capacity(runs.len());
    let mut csv = String::from("wsi,set,choice\n");
    for (i, (wsi, run_dir)) in runs.iter().enumerate() {
        if wsi.is_empty() || wsi.contains([',', '/', '\\', '"', '\n']) {
            return Err(Error::InvalidArgument(format!("unusable WSI name `{wsi}`")));
        }
        let plan = RunPlan::load(run_dir)?;
        let records = read_manifest(&run_dir.join(MANIFEST_FILE))?;
        let available: Vec<u32> = records.iter().map(|r| r.set_index).collect();
        let sets = sample_sets(&available, sets_per_wsi, seed, i)?;
        let slide = open_slide(&plan.slide)?;
        let by_set: HashMap<u32, &TileRecord> = records.iter().map(|r| (r.set_index, r)).collect();
        for &s in &sets {
            let dir = out.join("review").join(wsi).join(format!("set_{s}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for m in by_set[&s].members.iter().filter(|m| m.pen_class != PenClass::High) {
                let raster = slide.read_region(&RegionSpec::level0(m.x, m.y, plan.grid.tile_w, plan.grid.tile_h))?;
                raster.save_png(&dir.join(format!("{}.png", m.variant)))?;
            }
            csv.push_str(&format!("{wsi},{s},\n"));
        }
        wsis.push(ReviewWsi {
            wsi: wsi.clone(),
            run_dir: run_dir.clone(),
            sets,
        });
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let answers = out.join(ANSWERS_FILE);
    fs::write(&answers, csv).map_err(|e| Error::io(&answers, e))?;
    let bundle = ReviewBundle {
        seed,
        sets_per_wsi,
        wsis,
    };
    let path = out.join(BUNDLE_FILE);
    let mut json = serde_json::to_string_pretty(&bundle)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub wsi: String,
    pub set_index: u32,
    pub choice: Choice,
}

/// Parses a completed `wsi,set,choice` file. Blank choices are an error.
pub fn read_answers(path: &Path) -> Result<Vec<Answer>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["wsi", "set", "choice"] {
        return Err(Error::MalformedCsv(format!("{}: expected header `wsi,set,choice`", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedCsv(format!("{}: {e}", path.display())))?;
        let row = i + 2;
        let bad = |what: &str| Error::MalformedCsv(format!("{}: row {row}: {what}", path.display()));
        if rec.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let set_index = rec[1].trim().parse().map_err(|_| bad("set is not an integer"))?;
        let choice = parse_choice(&rec[2]).ok_or_else(|| bad("choice must be one of C, L, U, R, D, None"))?;
        out.push(Answer {
            wsi: rec[0].trim().to_string(),
            set_index,
            choice,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsiAgreement {
    pub wsi: String,
    pub matches: usize,
    pub total: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub per_wsi: Vec<WsiAgreement>,
    pub matches: usize,
    pub total: usize,
    pub percent: f64,
}

/// Share of answers equal to the pipeline's pick, per WSI (in first-seen
/// order) and overall.
pub fn agreement(answers: &[Answer], pipeline: &HashMap<(String, u32), Choice>) -> Result<Agreement> {
    let mut per: Vec<WsiAgreement> = Vec::new();
    for a in answers {
        let key = (a.wsi.clone(), a.set_index);
        let expected = pipeline.get(&key).ok_or_else(|| {
            Error::MalformedCsv(format!("answer for unknown set {} of `{}`", a.set_index, a.wsi))
        })?;
        let idx = match per.iter().position(|w| w.wsi == a.wsi) {
            Some(i) => i,
            None => {
                per.push(WsiAgreement {
                    wsi: a.wsi.clone(),
                    matches: 0,
                    total: 0,
                    percent: 0.0,
                });
                per.len() - 1
            }
        };
        per[idx].total += 1;
        per[idx].matches += (a.choice == *expected) as usize;
    }
    for w in &mut per {
        w.percent = w.matches as f64 * 100.0 / w.total as f64;
    }
    let matches = per.iter().map(|w| w.matches).sum();
    let total: usize = per.iter().map(|w| w.total).sum();
    if total == 0 {
        return Err(Error::MalformedCsv("no answers".into()));
    }
    Ok(Agreement {
        per_wsi: per,
        matches,
        total,
        percent: matches as f64 * 100.0 / total as f64,
    })
}

/// Scores an answers file against the runs recorded in a bundle.
pub fn score_review(bundle_dir: &Path, answers_path: &Path) -> Result<Agreement> {
    let bundle = ReviewBundle::load(bundle_dir)?;
    let mut pipeline = HashMap::new();
    for w in &bundle.wsis {
        for r in read_manifest(&w.run_dir.join(MANIFEST_FILE))? {
            pipeline.insert((w.wsi.clone(), r.set_index), r.chosen);
        }
    }
    agreement(&read_answers(answers_path)?, &pipeline)
}
