//! Owned pixel buffers shared by every stage.

use std::path::Path;

use crate::error::{Error, Result};

pub const WHITE: [u8; 3] = [255, 255, 255];

/// Row-major 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterRgb {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterRgb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterRgb")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterRgb {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "raster {width}x{height} needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.pixels.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Copy of the `w`×`h` window at (`x`, `y`); out-of-range pixels are white.
    pub fn crop(&self, x: i64, y: i64, w: u32, h: u32) -> RasterRgb {
        let mut out = RasterRgb::filled(w, h, WHITE);
        for oy in 0..h {
            let sy = y + oy as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            let sx0 = x.max(0);
            let sx1 = (x + w as i64).min(self.width as i64);
            if sx1 <= sx0 {
                continue;
            }
            let src = (sy as usize * self.width as usize + sx0 as usize) * 3;
            let dst = (oy as usize * w as usize + (sx0 - x) as usize) * 3;
            let n = (sx1 - sx0) as usize * 3;
            out.pixels[dst..dst + n].copy_from_slice(&self.pixels[src..src + n]);
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_rgb8();
        let (w, h) = img.dimensions();
        RasterRgb::new(w, h, img.into_raw())
    }
}

/// Single-channel 8-bit plane, used for binary masks and label masks alike.
#[derive(Clone, PartialEq, Eq)]
pub struct Plane {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Plane")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::ShapeMismatch(format!(
                "plane {width}x{height} needs {} bytes, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }

    /// Loads an 8-bit single-channel PNG. Other color types are rejected,
    /// since silently converting RGB to luma would corrupt label values.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::MaskShapeMismatch(format!(
                    "{} is {:?}, expected 8-bit grayscale",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        Plane::new(w, h, gray.into_raw())
    }
}
