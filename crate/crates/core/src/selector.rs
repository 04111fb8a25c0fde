//! Weighted artifact cost per tile and argmin selection within a set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{LabelMask, BACKGROUND, BLUR, FOLD, QUALIFIED};
use crate::tiler::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtifactFractions {
    pub p_fo: f64,
    pub p_bl: f64,
    pub p_bg: f64,
    pub p_qt: f64,
}

impl ArtifactFractions {
    pub fn from_counts(counts: [u64; 4]) -> ArtifactFractions {
        let total = counts.iter().sum::<u64>().max(1) as f64;
        ArtifactFractions {
            p_fo: counts[FOLD as usize] as f64 / total,
            p_bl: counts[BLUR as usize] as f64 / total,
            p_bg: counts[BACKGROUND as usize] as f64 / total,
            p_qt: counts[QUALIFIED as usize] as f64 / total,
        }
    }
}

pub fn fractions(mask: &LabelMask) -> ArtifactFractions {
    ArtifactFractions::from_counts(mask.counts())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub lambda_fo: f64,
    pub lambda_bl: f64,
    pub lambda_bg: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            lambda_fo: 1.0,
            lambda_bl: 1.0,
            lambda_bg: 1.0,
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_fo, self.lambda_bl, self.lambda_bg];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weights must be finite and nonnegative, got {all:?}"
            )));
        }
        Ok(())
    }
}

pub fn cost(f: &ArtifactFractions, w: &Weights) -> f64 {
    w.lambda_fo * f.p_fo + w.lambda_bl * f.p_bl + w.lambda_bg * f.p_bg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberCost {
    pub variant: Variant,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub set_index: u32,
    pub chosen: Option<Variant>,
    /// Minimum member cost, whether or not a tile was chosen.
    pub cost: f64,
    pub fractions: Option<ArtifactFractions>,
    pub costs: Vec<MemberCost>,
}

/// Picks the cheapest member, scanning C, L, U, R, D and keeping the first
/// minimum. Sets whose best cost exceeds `c_max` get no tile.
pub fn select_tile(
    set_index: u32,
    members: &[(Variant, ArtifactFractions)],
    w: &Weights,
    c_max: f64,
) -> Result<Selection> {
    let scored = members.iter().map(|(v, f)| (*v, *f, cost(f, w))).collect();
    pick(set_index, scored, c_max)
}

/// Weighted artifact cost from raw label counts. The weighted count is summed before
/// the single division, so with integer weights equal sums give equal costs.
pub fn count_cost(counts: [u64; 4], w: &Weights) -> f64 {
    let total = counts.iter().sum::<u64>().max(1) as f64;
    let weighted = w.lambda_fo * counts[FOLD as usize] as f64
        + w.lambda_bl * counts[BLUR as usize] as f64
        + w.lambda_bg * counts[BACKGROUND as usize] as f64;
    weighted / total
}

/// [`select_tile`] on label counts, immune to rounding ties between members
/// whose fractions differ only in how the artifact pixels are split.
pub fn select_by_counts(set_index: u32, members: &[(Variant, [u64; 4])], w: &Weights, c_max: f64) -> Result<Selection> {
    let scored = members
        .iter()
        .map(|(v, c)| (*v, ArtifactFractions::from_counts(*c), count_cost(*c, w)))
        .collect();
    pick(set_index, scored, c_max)
}

fn pick(set_index: u32, mut scored: Vec<(Variant, ArtifactFractions, f64)>, c_max: f64) -> Result<Selection> {
    scored.sort_by_key(|(v, _, _)| *v);
    let best = scored
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, (_, _, c))| match acc {
            Some((_, b)) if *c >= b => acc,
            _ => Some((i, *c)),
        })
        .ok_or(Error::EmptySet)?;
    let (chosen, fractions) = if best.1 > c_max {
        (None, None)
    } else {
        (Some(scored[best.0].0), Some(scored[best.0].1))
    };
    Ok(Selection {
        set_index,
        chosen,
        cost: best.1,
        fractions,
        costs: scored.iter().map(|&(variant, _, cost)| MemberCost { variant, cost }).collect(),
    })
}
