//! Tiled pyramidal TIFF-family reader (plain pyramidal TIFF, SVS-style files).

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use tiff::decoder::{ChunkType, Decoder, DecodingResult};
use tiff::tags::Tag;
use tiff::ColorType;

use super::LevelInfo;
use crate::error::{Error, Result};
use crate::raster::RasterRgb;

const CACHE_CHUNKS: usize = 256;

type TiffDecoder = Decoder<BufReader<File>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Samples {
    Gray,
    Rgb,
    Rgba,
}

impl Samples {
    fn count(self) -> usize {
        match self {
            Samples::Gray => 1,
            Samples::Rgb => 3,
            Samples::Rgba => 4,
        }
    }
}

#[derive(Debug, Clone)]
struct TiffLevel {
    ifd: usize,
    chunk_w: u32,
    chunk_h: u32,
    chunks_across: u32,
    samples: Samples,
}

/// Decoded chunk, always RGB.
struct Chunk {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

#[derive(Default)]
struct ChunkCache {
    map: HashMap<(usize, u32), Arc<Chunk>>,
    order: VecDeque<(usize, u32)>,
}

impl ChunkCache {
    fn get(&self, key: (usize, u32)) -> Option<Arc<Chunk>> {
        self.map.get(&key).cloned()
    }

    fn insert(&mut self, key: (usize, u32), chunk: Arc<Chunk>) {
        if self.map.insert(key, chunk).is_none() {
            self.order.push_back(key);
            while self.order.len() > CACHE_CHUNKS {
                if let Some(old) = self.order.pop_front() {
                    self.map.remove(&old);
                }
            }
        }
    }
}

pub(super) struct TiffSource {
    path: PathBuf,
    levels: Vec<TiffLevel>,
    /// Idle decoders, each with the IFD it is currently positioned on.
    idle: Mutex<Vec<(TiffDecoder, usize)>>,
    cache: Mutex<ChunkCache>,
}

fn corrupt(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::CorruptPyramid(format!("{}: {e}", path.display()))
}

fn new_decoder(path: &Path) -> Result<TiffDecoder> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Decoder::new(BufReader::new(file)).map_err(|e| corrupt(path, e))
}

fn samples_of(path: &Path, color: ColorType, compression: u16) -> Result<Samples> {
    match color {
        ColorType::RGB(8) => Ok(Samples::Rgb),
        ColorType::RGBA(8) => Ok(Samples::Rgba),
        ColorType::Gray(8) => Ok(Samples::Gray),
        // JPEG-coded YCbCr is converted to RGB by the JPEG decoder.
        ColorType::YCbCr(8) if compression == 7 => Ok(Samples::Rgb),
        other => Err(Error::UnsupportedFormat(format!(
            "{}: pixel layout {other:?} (compression {compression})",
            path.display()
        ))),
    }
}

/// Microns per pixel from an Aperio-style description or resolution tags.
fn parse_mpp(dec: &mut TiffDecoder) -> Option<f64> {
    if let Ok(Some(tiff::decoder::ifd::Value::Ascii(desc))) = dec.find_tag(Tag::ImageDescription) {
        for field in desc.split('|') {
            let mut kv = field.splitn(2, '=');
            if let (Some(k), Some(v)) = (kv.next(), kv.next()) {
                if k.trim().eq_ignore_ascii_case("mpp") {
                    if let Ok(mpp) = v.trim().parse::<f64>() {
                        return Some(mpp);
                    }
                }
            }
        }
    }
    let xres = dec.get_tag_f64(Tag::XResolution).ok()?;
    let unit = dec.find_tag_unsigned::<u16>(Tag::ResolutionUnit).ok().flatten().unwrap_or(2);
    if xres <= 0.0 {
        return None;
    }
    match unit {
        3 => Some(10_000.0 / xres),
        2 => Some(25_400.0 / xres),
        _ => None,
    }
}

impl TiffSource {
    pub(super) fn open(path: &Path) -> Result<(TiffSource, Vec<LevelInfo>, Option<f64>)> {
        let file_len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        let mut dec = new_decoder(path)?;
        let mpp = parse_mpp(&mut dec);

        let mut found: Vec<(LevelInfo, TiffLevel)> = Vec::new();
        let mut ifd = 0usize;
        loop {
            let (w, h) = dec.dimensions().map_err(|e| corrupt(path, e))?;
            let chunk_type = dec.get_chunk_type();
            if ifd == 0 || chunk_type == ChunkType::Tile {
                let compression = dec
                    .find_tag_unsigned::<u16>(Tag::Compression)
                    .map_err(|e| corrupt(path, e))?
                    .unwrap_or(1);
                let color = dec.colortype().map_err(|e| corrupt(path, e))?;
                let samples = samples_of(path, color, compression)?;
                let planar = dec
                    .find_tag_unsigned::<u16>(Tag::PlanarConfiguration)
                    .map_err(|e| corrupt(path, e))?
                    .unwrap_or(1);
                if planar != 1 && samples != Samples::Gray {
                    return Err(Error::UnsupportedFormat(format!(
                        "{}: planar sample layout",
                        path.display()
                    )));
                }
                let (offsets_tag, counts_tag) = match chunk_type {
                    ChunkType::Tile => (Tag::TileOffsets, Tag::TileByteCounts),
                    ChunkType::Strip => (Tag::StripOffsets, Tag::StripByteCounts),
                };
                let offsets = dec.get_tag_u64_vec(offsets_tag).map_err(|e| corrupt(path, e))?;
                let counts = dec.get_tag_u64_vec(counts_tag).map_err(|e| corrupt(path, e))?;
                if offsets.len() != counts.len() {
                    return Err(corrupt(path, format!("IFD {ifd}: offset/bytecount length mismatch")));
                }
                if let Some((o, c)) = offsets
                    .iter()
                    .zip(&counts)
                    .find(|(o, c)| o.checked_add(**c).is_none_or(|end| end > file_len))
                {
                    return Err(corrupt(
                        path,
                        format!("IFD {ifd}: chunk at {o}+{c} runs past end of file ({file_len} bytes)"),
                    ));
                }
                let (chunk_w, chunk_h) = dec.chunk_dimensions();
                if chunk_w == 0 || chunk_h == 0 {
                    return Err(corrupt(path, format!("IFD {ifd}: zero chunk size")));
                }
                let chunks_across = w.div_ceil(chunk_w);
                let expected = chunks_across as u64 * h.div_ceil(chunk_h) as u64;
                if (offsets.len() as u64) < expected {
                    return Err(corrupt(
                        path,
                        format!("IFD {ifd}: {} chunks, expected {expected}", offsets.len()),
                    ));
                }
                let info = LevelInfo {
                    width: w,
                    height: h,
                    downsample: 1.0,
                };
                found.push((
                    info,
                    TiffLevel {
                        ifd,
                        chunk_w,
                        chunk_h,
                        chunks_across,
                        samples,
                    },
                ));
            }
            if !dec.more_images() {
                break;
            }
            dec.next_image().map_err(|e| corrupt(path, e))?;
            ifd += 1;
        }

        let (w0, h0) = (found[0].0.width as f64, found[0].0.height as f64);
        for (info, _) in found.iter_mut().skip(1) {
            info.downsample = (w0 / info.width as f64 + h0 / info.height as f64) / 2.0;
        }
        // Level 0 stays first; reduced levels ordered by factor.
        found[1..].sort_by(|a, b| a.0.downsample.total_cmp(&b.0.downsample));

        let (infos, levels): (Vec<_>, Vec<_>) = found.into_iter().unzip();
        let source = TiffSource {
            path: path.to_path_buf(),
            levels,
            idle: Mutex::new(vec![(dec, ifd)]),
            cache: Mutex::new(ChunkCache::default()),
        };
        Ok((source, infos, mpp))
    }

    fn decode_chunk(&self, level: usize, index: u32) -> Result<Arc<Chunk>> {
        if let Some(c) = self.cache.lock().expect("cache poisoned").get((level, index)) {
            return Ok(c);
        }
        let lv = &self.levels[level];
        let taken = self.idle.lock().expect("decoder pool poisoned").pop();
        let (mut dec, mut at) = match taken {
            Some(d) => d,
            None => (new_decoder(&self.path)?, 0),
        };
        if at != lv.ifd {
            dec.seek_to_image(lv.ifd).map_err(|e| corrupt(&self.path, e))?;
            at = lv.ifd;
        }
        let (cw, ch) = dec.chunk_data_dimensions(index);
        let data = dec
            .read_chunk(index)
            .map_err(|e| corrupt(&self.path, format!("chunk {index} of IFD {}: {e}", lv.ifd)))?;
        self.idle.lock().expect("decoder pool poisoned").push((dec, at));

        let DecodingResult::U8(raw) = data else {
            return Err(Error::UnsupportedFormat(format!(
                "{}: non 8-bit samples",
                self.path.display()
            )));
        };
        let n = cw as usize * ch as usize;
        let spp = lv.samples.count();
        if raw.len() < n * spp {
            return Err(corrupt(&self.path, format!("chunk {index} decoded short")));
        }
        let rgb = match lv.samples {
            Samples::Rgb => {
                let mut raw = raw;
                raw.truncate(n * 3);
                raw
            }
            Samples::Rgba => raw.chunks_exact(4).take(n).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            Samples::Gray => raw.iter().take(n).flat_map(|&g| [g, g, g]).collect(),
        };
        let chunk = Arc::new(Chunk {
            width: cw,
            height: ch,
            rgb,
        });
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert((level, index), Arc::clone(&chunk));
        Ok(chunk)
    }

    /// Copies level pixels into `out`, whose origin is (`x`, `y`) in level
    /// coordinates. Pixels outside the level are left untouched.
    pub(super) fn read_into(&self, level: usize, info: LevelInfo, x: i64, y: i64, out: &mut RasterRgb) -> Result<()> {
        let lv = &self.levels[level];
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + out.width() as i64).min(info.width as i64);
        let y1 = (y + out.height() as i64).min(info.height as i64);
        if x1 <= x0 || y1 <= y0 {
            return Ok(());
        }
        let out_w = out.width() as usize;
        let (cw, chh) = (lv.chunk_w as i64, lv.chunk_h as i64);
        for cy in (y0 / chh)..=((y1 - 1) / chh) {
            for cx in (x0 / cw)..=((x1 - 1) / cw) {
                let index = (cy as u32) * lv.chunks_across + cx as u32;
                let chunk = self.decode_chunk(level, index)?;
                let (ox, oy) = (cx * cw, cy * chh);
                let sx0 = x0.max(ox);
                let sx1 = x1.min(ox + chunk.width as i64);
                let sy0 = y0.max(oy);
                let sy1 = y1.min(oy + chunk.height as i64);
                if sx1 <= sx0 {
                    continue;
                }
                let run = (sx1 - sx0) as usize * 3;
                for sy in sy0..sy1 {
                    let src = (((sy - oy) as usize) * chunk.width as usize + (sx0 - ox) as usize) * 3;
                    let dst = (((sy - y) as usize) * out_w + (sx0 - x) as usize) * 3;
                    out.as_bytes_mut()[dst..dst + run].copy_from_slice(&chunk.rgb[src..src + run]);
                }
            }
        }
        Ok(())
    }
}
