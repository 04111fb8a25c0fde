//! Connected components and binary morphology on byte planes.

use crate::raster::Plane;

/// Visits every 8-connected component of pixels satisfying `member`.
/// `visit` receives the component's pixel indices.
pub fn components8<P, V>(plane: &Plane, member: P, mut visit: V)
where
    P: Fn(u8) -> bool,
    V: FnMut(&[usize]),
{
    let (w, h) = (plane.width() as usize, plane.height() as usize);
    let data = plane.data();
    let mut seen = vec![false; data.len()];
    let mut stack = Vec::new();
    let mut comp = Vec::new();
    for start in 0..data.len() {
        if seen[start] || !member(data[start]) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        comp.clear();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && member(data[j]) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        visit(&comp);
    }
}

/// 3×3 max filter (binary dilation with the full square structuring element).
pub fn dilate3x3(plane: &Plane) -> Plane {
    let (w, h) = (plane.width() as usize, plane.height() as usize);
    let src = plane.data();
    let mut horiz = vec![0u8; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            horiz[y * w + x] = row[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| horiz[yy * w + x]).max().unwrap_or(0);
        }
    }
    Plane::new(plane.width(), plane.height(), out).expect("same dimensions")
}
