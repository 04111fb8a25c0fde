//! Tile classification metrics and mask overlap.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::LabelMask;
use crate::selector::ArtifactFractions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileClass {
    ArtifactFree,
    Blur,
    Fold,
}

impl TileClass {
    pub const ALL: [TileClass; 3] = [TileClass::ArtifactFree, TileClass::Blur, TileClass::Fold];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<TileClass> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "artifact_free" | "0" => Some(TileClass::ArtifactFree),
            "blur" | "1" => Some(TileClass::Blur),
            "fold" | "2" => Some(TileClass::Fold),
            _ => None,
        }
    }
}

pub const DEFAULT_TAU: f64 = 0.1;

/// Fold or blur when either fraction reaches `tau` (fold on ties),
/// otherwise artifact-free.
pub fn tile_class(f: &ArtifactFractions, tau: f64) -> TileClass {
    if f.p_fo.max(f.p_bl) >= tau {
        if f.p_fo >= f.p_bl {
            TileClass::Fold
        } else {
            TileClass::Blur
        }
    } else {
        TileClass::ArtifactFree
    }
}

/// Rows are the true class, columns the predicted class, both in
/// (artifact-free, blur, fold) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix3(pub [[u64; 3]; 3]);

impl ConfusionMatrix3 {
    pub fn from_pairs<I: IntoIterator<Item = (TileClass, TileClass)>>(pairs: I) -> Self {
        let mut m = [[0u64; 3]; 3];
        for (t, p) in pairs {
            m[t.index()][p.index()] += 1;
        }
        ConfusionMatrix3(m)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.0[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.0[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..3).map(|i| self.0[i][j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the metric had a zero denominator and was set to 0.
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: [ClassScore; 3],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl ClassMetrics {
    pub fn class(&self, c: TileClass) -> &ClassScore {
        &self.per_class[c.index()]
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn prf(cm: &ConfusionMatrix3) -> Result<ClassMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class = [0, 1, 2].map(|i| {
        let tp = cm.0[i][i];
        let (precision, precision_defined) = ratio(tp, cm.col_sum(i));
        let (recall, recall_defined) = ratio(tp, cm.row_sum(i));
        let (f1, f1_defined) = ratio(2 * tp, cm.col_sum(i) + cm.row_sum(i));
        ClassScore {
            precision,
            recall,
            f1,
            precision_defined,
            recall_defined,
            f1_defined,
        }
    });
    let mean = |g: fn(&ClassScore) -> f64| per_class.iter().map(g).sum::<f64>() / 3.0;
    Ok(ClassMetrics {
        per_class,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        accuracy: cm.trace() as f64 / total as f64,
    })
}

/// Overlap of the pixels carrying `label` in two masks; 1.0 when neither
/// has any.
pub fn dice(a: &LabelMask, b: &LabelMask, label: u8) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(dice_where(a, b, label, |_| true))
}

/// Dice restricted to pixels where `keep(index)` holds.
pub fn dice_where(a: &LabelMask, b: &LabelMask, label: u8, keep: impl Fn(usize) -> bool) -> f64 {
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (i, (&x, &y)) in a.labels().iter().zip(b.labels()).enumerate() {
        if !keep(i) {
            continue;
        }
        let (ia, ib) = (x == label, y == label);
        na += ia as u64;
        nb += ib as u64;
        inter += (ia && ib) as u64;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// Reads an `id,class` CSV of tile classes.
pub fn read_class_csv(path: &Path) -> Result<Vec<(String, TileClass)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["id", "class"] {
        return Err(Error::MalformedCsv(format!(
            "{}: expected header `id,class`, got `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let class = TileClass::parse(&rec[1]).ok_or_else(|| {
            Error::MalformedCsv(format!("{}: row {}: unknown class `{}`", path.display(), line + 2, &rec[1]))
        })?;
        out.push((rec[0].trim().to_string(), class));
    }
    Ok(out)
}

/// Pairs truth and prediction rows by id.
pub fn confusion_from_csv(truth: &Path, pred: &Path) -> Result<ConfusionMatrix3> {
    let truth_rows = read_class_csv(truth)?;
    let pred_rows: std::collections::HashMap<String, TileClass> = read_class_csv(pred)?.into_iter().collect();
    let mut pairs = Vec::with_capacity(truth_rows.len());
    for (id, t) in truth_rows {
        let p = pred_rows
            .get(&id)
            .ok_or_else(|| Error::MalformedCsv(format!("{}: no prediction for id `{id}`", pred.display())))?;
        pairs.push((t, *p));
    }
    Ok(ConfusionMatrix3::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Plane;

    fn f(p_fo: f64, p_bl: f64, p_bg: f64) -> ArtifactFractions {
        ArtifactFractions {
            p_fo,
            p_bl,
            p_bg,
            p_qt: 1.0 - p_fo - p_bl - p_bg,
        }
    }

    #[test]
    fn tile_class_rules() {
        assert_eq!(tile_class(&f(0.0, 0.0, 0.2), DEFAULT_TAU), TileClass::ArtifactFree);
        assert_eq!(tile_class(&f(0.3, 0.05, 0.0), DEFAULT_TAU), TileClass::Fold);
        assert_eq!(tile_class(&f(0.2, 0.2, 0.0), DEFAULT_TAU), TileClass::Fold);
        assert_eq!(tile_class(&f(0.05, 0.1, 0.0), DEFAULT_TAU), TileClass::Blur);
    }

    #[test]
    fn perfect_classifier() {
        let m = prf(&ConfusionMatrix3([[5, 0, 0], [0, 3, 0], [0, 0, 2]])).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|s| s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0));
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = prf(&ConfusionMatrix3([[4, 0, 0], [0, 0, 0], [0, 0, 0]])).unwrap();
        let blur = m.class(TileClass::Blur);
        assert!(!blur.precision_defined && !blur.recall_defined);
        assert_eq!(blur.f1, 0.0);
        assert!(matches!(prf(&ConfusionMatrix3::default()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn dice_cases() {
        let a = LabelMask::filled(10, 10, 2);
        assert_eq!(dice(&a, &a, 2).unwrap(), 1.0);
        let mut pa = Plane::filled(20, 10, 0);
        let mut pb = Plane::filled(20, 10, 0);
        for y in 0..10 {
            for x in 0..10 {
                pa.set(x, y, 2);
                pb.set(x + 5, y, 2);
            }
        }
        let (ma, mb) = (LabelMask::from_plane(pa).unwrap(), LabelMask::from_plane(pb).unwrap());
        assert_eq!(dice(&ma, &mb, 2).unwrap(), 0.5);
        assert_eq!(dice(&ma, &mb, 3).unwrap(), 1.0);
        assert!(matches!(dice(&a, &ma, 2), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.csv");
        let p = dir.path().join("p.csv");
        std::fs::write(&t, "id,class\na,fold\nb,blur\nc,artifact-free\n").unwrap();
        std::fs::write(&p, "id,class\nc,artifact_free\nb,fold\na,fold\n").unwrap();
        let cm = confusion_from_csv(&t, &p).unwrap();
        assert_eq!(cm.0, [[1, 0, 0], [0, 0, 1], [0, 0, 1]]);
        std::fs::write(&p, "id,label\n").unwrap();
        assert!(matches!(confusion_from_csv(&t, &p), Err(Error::MalformedCsv(_))));
    }
}
