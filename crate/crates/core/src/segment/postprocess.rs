use super::{LabelMask, BACKGROUND};
use crate::morph::components8;

/// Relabels every 8-connected background component smaller than `min_area`
/// to the most common non-background label bordering it (smaller label on
/// ties). Components with no non-background neighbour are left alone.
pub fn close_small_background(mask: &LabelMask, min_area: usize) -> LabelMask {
    let plane = mask.plane();
    let (w, h) = (plane.width() as usize, plane.height() as usize);
    let src = plane.data();
    let mut out = plane.clone();
    components8(plane, |v| v == BACKGROUND, |comp| {
        if comp.len() >= min_area {
            return;
        }
        let mut in_comp = std::collections::HashSet::with_capacity(comp.len());
        in_comp.extend(comp.iter().copied());
        let mut border = std::collections::HashSet::new();
        for &i in comp {
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !in_comp.contains(&j) {
                        border.insert(j);
                    }
                }
            }
        }
        let mut votes = [0usize; 4];
        for j in border {
            let v = src[j];
            if v != BACKGROUND {
                votes[v as usize] += 1;
            }
        }
        let (best, count) = (1..4usize).fold((0, 0), |acc, l| if votes[l] > acc.1 { (l, votes[l]) } else { acc });
        if count > 0 {
            for &i in comp {
                out.data_mut()[i] = best as u8;
            }
        }
    });
    LabelMask::from_plane(out).expect("labels preserved")
}
