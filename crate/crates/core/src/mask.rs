//! Binary occupancy masks and PGM i/o.
//!
//! Image convention: the sector origin maps to the top-center pixel, `+u`
//! points down the image (increasing row), and `+v` points right. Pixel
//! `(row, col)` covers `u in [row, row+1) * pixel_size` and
//! `v in [col - width/2, col + 1 - width/2) * pixel_size`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::view::PlanarSlice;

/// A width x height mask of 0/255 pixels at a fixed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    /// Row-major, top-to-bottom; each entry 0 or 255.
    pub pixels: Vec<u8>,
    /// Millimetres per pixel.
    pub pixel_size: f64,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, pixel_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if !(pixel_size.is_finite() && pixel_size > 0.0) {
            return Err(Error::invalid("pixel_size must be > 0"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for {width}x{height} mask",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p != 0 && p != 255) {
            return Err(Error::invalid(format!("mask pixel value {bad}, want 0 or 255")));
        }
        Ok(Self {
            width,
            height,
            pixels,
            pixel_size,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn on_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 255).count()
    }

    /// Writes binary PGM (`P5`, maxval 255).
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_pgm_to(&mut out)
    }

    pub fn write_pgm_to(&self, out: &mut impl Write) -> Result<()> {
        write_pgm_bytes(out, self.width, self.height, &self.pixels)
    }

    /// Reads binary PGM; every pixel must be 0 or 255. The pixel scale is not
    /// stored in PGM, so the caller supplies it.
    pub fn read_pgm(path: impl AsRef<Path>, pixel_size: f64) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::read_pgm_from(&mut bytes.as_slice(), pixel_size)
    }

    pub fn read_pgm_from(reader: &mut impl Read, pixel_size: f64) -> Result<Self> {
        let (width, height, pixels) = read_pgm_bytes(reader)?;
        Self::new(width, height, pixels, pixel_size)
    }
}

/// Diagnostics from rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RasterStats {
    /// Slice points that fell outside the image extent and were dropped.
    pub dropped: usize,
}

/// Rasterizes a slice: a pixel is 255 iff at least one point lands in it.
pub fn rasterize(
    slice: &PlanarSlice,
    width: usize,
    height: usize,
    pixel_size: f64,
) -> Result<BinaryMask> {
    rasterize_with_stats(slice, width, height, pixel_size).map(|(mask, _)| mask)
}

/// As [`rasterize`], also reporting how many points fell off the image.
pub fn rasterize_with_stats(
    slice: &PlanarSlice,
    width: usize,
    height: usize,
    pixel_size: f64,
) -> Result<(BinaryMask, RasterStats)> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("raster dimensions must be positive"));
    }
    if !(pixel_size.is_finite() && pixel_size > 0.0) {
        return Err(Error::invalid("pixel_size must be > 0"));
    }
    let mut pixels = vec![0u8; width * height];
    let mut stats = RasterStats::default();
    let half_width = (width / 2) as f64;
    for p in &slice.points2d {
        let row = (p[0] / pixel_size).floor();
        let col = (p[1] / pixel_size).floor() + half_width;
        if row < 0.0 || col < 0.0 || row >= height as f64 || col >= width as f64 {
            stats.dropped += 1;
            continue;
        }
        pixels[row as usize * width + col as usize] = 255;
    }
    Ok((BinaryMask::new(width, height, pixels, pixel_size)?, stats))
}

/// Fraction of `image_mask`'s on-pixels that `mask` also covers.
///
/// Returns 1.0 when `image_mask` has no on-pixels.
pub fn overlay_coverage(mask: &BinaryMask, image_mask: &BinaryMask) -> Result<f64> {
    if mask.width != image_mask.width || mask.height != image_mask.height {
        return Err(Error::invalid(format!(
            "mask dimensions {}x{} vs {}x{}",
            mask.width, mask.height, image_mask.width, image_mask.height
        )));
    }
    let mut covered = 0usize;
    let mut total = 0usize;
    for (a, b) in mask.pixels.iter().zip(&image_mask.pixels) {
        if *b == 255 {
            total += 1;
            if *a == 255 {
                covered += 1;
            }
        }
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(covered as f64 / total as f64)
}

pub(crate) fn write_pgm_bytes(
    out: &mut impl Write,
    width: usize,
    height: usize,
    pixels: &[u8],
) -> Result<()> {
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    Ok(())
}

pub(crate) fn read_pgm_bytes(reader: &mut impl Read) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        // PGM comments run to end of line.
        while pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("truncated pgm header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::parse("not a binary pgm (missing P5 magic)"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|e| Error::parse(format!("pgm width: {e}")))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|e| Error::parse(format!("pgm height: {e}")))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|e| Error::parse(format!("pgm maxval: {e}")))?;
    if maxval != 255 {
        return Err(Error::parse(format!("pgm maxval {maxval}, want 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse("pgm dimensions overflow"))?;
    if bytes.len() < pos || bytes.len() - pos < need {
        return Err(Error::parse("pgm raster shorter than header promises"));
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}
