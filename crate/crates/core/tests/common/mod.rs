#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use wsitile::RasterRgb;

/// One image directory to write.
pub struct IfdSpec<'a> {
    pub width: u32,
    pub height: u32,
    /// `Some(tile side)` for a tiled IFD, `None` for a single strip.
    pub tile: Option<u32>,
    pub description: Option<String>,
    pub pixel: &'a dyn Fn(u32, u32) -> [u8; 3],
}

enum Val {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Ascii(Vec<u8>),
}

/// Minimal little-endian uncompressed RGB TIFF writer (test fixture only).
/// Identical chunks are stored once and shared, so large uniform levels stay small.
pub fn write_tiff(path: &Path, ifds: &[IfdSpec]) {
    let mut out: Vec<u8> = vec![b'I', b'I', 42, 0, 0, 0, 0, 0];
    let mut dirs: Vec<Vec<(u16, Val)>> = Vec::new();
    for spec in ifds {
        let mut dedup: HashMap<Vec<u8>, u32> = HashMap::new();
        let (cw, ch) = match spec.tile {
            Some(t) => (t, t),
            None => (spec.width, spec.height),
        };
        let across = spec.width.div_ceil(cw);
        let down = spec.height.div_ceil(ch);
        let mut offsets = Vec::new();
        let mut counts = Vec::new();
        for ty in 0..down {
            for tx in 0..across {
                let mut buf = Vec::with_capacity((cw * ch * 3) as usize);
                for y in 0..ch {
                    for x in 0..cw {
                        let (gx, gy) = (tx * cw + x, ty * ch + y);
                        if gx < spec.width && gy < spec.height {
                            buf.extend_from_slice(&(spec.pixel)(gx, gy));
                        } else {
                            buf.extend_from_slice(&[0, 0, 0]);
                        }
                    }
                }
                let len = buf.len() as u32;
                let off = *dedup.entry(buf.clone()).or_insert_with(|| {
                    let o = out.len() as u32;
                    out.extend_from_slice(&buf);
                    o
                });
                offsets.push(off);
                counts.push(len);
            }
        }
        let mut tags: Vec<(u16, Val)> = vec![
            (254, Val::Long(vec![if dirs.is_empty() { 0 } else { 1 }])),
            (256, Val::Long(vec![spec.width])),
            (257, Val::Long(vec![spec.height])),
            (258, Val::Short(vec![8, 8, 8])),
            (259, Val::Short(vec![1])),
            (262, Val::Short(vec![2])),
        ];
        if let Some(d) = &spec.description {
            let mut b = d.as_bytes().to_vec();
            b.push(0);
            tags.push((270, Val::Ascii(b)));
        }
        if spec.tile.is_none() {
            tags.push((273, Val::Long(offsets.clone())));
        }
        tags.push((277, Val::Short(vec![3])));
        if spec.tile.is_none() {
            tags.push((278, Val::Long(vec![spec.height])));
            tags.push((279, Val::Long(counts.clone())));
        }
        tags.push((284, Val::Short(vec![1])));
        if spec.tile.is_some() {
            tags.push((322, Val::Long(vec![cw])));
            tags.push((323, Val::Long(vec![ch])));
            tags.push((324, Val::Long(offsets)));
            tags.push((325, Val::Long(counts)));
        }
        dirs.push(tags);
    }

    let mut next_ptr_pos = 4usize;
    for tags in dirs {
        if out.len() % 2 == 1 {
            out.push(0);
        }
        let ifd_start = out.len() as u32;
        out[next_ptr_pos..next_ptr_pos + 4].copy_from_slice(&ifd_start.to_le_bytes());
        let n = tags.len();
        let mut extra_at = ifd_start as usize + 2 + n * 12 + 4;
        let mut entries = Vec::new();
        let mut extra = Vec::new();
        for (tag, val) in &tags {
            let (typ, count, bytes) = match val {
                Val::Short(v) => (3u16, v.len(), v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<_>>()),
                Val::Long(v) => (4u16, v.len(), v.iter().flat_map(|x| x.to_le_bytes()).collect()),
                Val::Ascii(v) => (2u16, v.len(), v.clone()),
            };
            entries.extend_from_slice(&tag.to_le_bytes());
            entries.extend_from_slice(&typ.to_le_bytes());
            entries.extend_from_slice(&(count as u32).to_le_bytes());
            if bytes.len() <= 4 {
                let mut v = bytes.clone();
                v.resize(4, 0);
                entries.extend_from_slice(&v);
            } else {
                entries.extend_from_slice(&(extra_at as u32).to_le_bytes());
                extra.extend_from_slice(&bytes);
                if extra.len() % 2 == 1 {
                    extra.push(0);
                }
                extra_at = ifd_start as usize + 2 + n * 12 + 4 + extra.len();
            }
        }
        out.extend_from_slice(&(n as u16).to_le_bytes());
        out.extend_from_slice(&entries);
        next_ptr_pos = out.len();
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&extra);
    }
    std::fs::write(path, out).unwrap();
}

pub fn raster_from_fn(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> RasterRgb {
    let mut r = RasterRgb::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            r.put(x, y, f(x, y));
        }
    }
    r
}

/// Deterministic, position-dependent test pattern.
pub fn pattern(x: u32, y: u32) -> [u8; 3] {
    let h = (x.wrapping_mul(2_654_435_761) ^ y.wrapping_mul(40_503)).wrapping_add(x * y);
    [(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8]
}
