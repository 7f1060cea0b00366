//! Image and mask grids, intensity normalization, resampling and PGM I/O.
//!
//! Images carry real-valued intensities in the nominal range `[0, 255]`;
//! masks are boolean grids where `true` is foreground. Both are stored
//! row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

/// Shared grid behaviour for images and masks.
pub trait Raster: Sized {
    type Pixel: Copy;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[Self::Pixel];
    fn from_pixels(width: usize, height: usize, data: Vec<Self::Pixel>) -> Self;

    /// Resample to `w` x `h`. Images use bilinear interpolation, masks
    /// nearest neighbour so labels stay binary.
    fn resize(&self, w: usize, h: usize) -> Self;

    fn flip_horizontal(&self) -> Self {
        let (w, h) = (self.width(), self.height());
        let src = self.pixels();
        let mut data = Vec::with_capacity(src.len());
        for y in 0..h {
            data.extend(src[y * w..(y + 1) * w].iter().rev().copied());
        }
        Self::from_pixels(w, h, data)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Linear map of `[min, max]` onto `[0, 255]`. A constant image maps to
    /// all zeros.
    pub fn rescale_intensity(&self) -> GrayImage {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let data = if self.data.is_empty() || !(span > 0.0) {
            vec![0.0; self.data.len()]
        } else {
            // Divide first so the maximum maps to exactly 255.
            self.data.iter().map(|&v| (v - lo) / span * 255.0).collect()
        };
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "mask data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground as 0/255 intensities.
    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&b| if b { 255.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Pixels at or above 128 become foreground.
    pub fn from_image(img: &GrayImage) -> BinaryMask {
        BinaryMask {
            width: img.width,
            height: img.height,
            data: img.data.iter().map(|&v| v >= 128.0).collect(),
        }
    }
}

impl Raster for GrayImage {
    type Pixel = f64;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[f64] {
        &self.data
    }
    fn from_pixels(width: usize, height: usize, data: Vec<f64>) -> Self {
        GrayImage {
            width,
            height,
            data,
        }
    }

    fn resize(&self, w: usize, h: usize) -> Self {
        assert!(w >= 1 && h >= 1, "resize target must be at least 1x1");
        if w == self.width && h == self.height {
            return self.clone();
        }
        let xs: Vec<(usize, usize, f64)> = (0..w)
            .map(|x| bilinear_taps(x, w, self.width))
            .collect();
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let (y0, y1, fy) = bilinear_taps(y, h, self.height);
            for &(x0, x1, fx) in &xs {
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }
}

impl Raster for BinaryMask {
    type Pixel = bool;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[bool] {
        &self.data
    }
    fn from_pixels(width: usize, height: usize, data: Vec<bool>) -> Self {
        BinaryMask {
            width,
            height,
            data,
        }
    }

    fn resize(&self, w: usize, h: usize) -> Self {
        assert!(w >= 1 && h >= 1, "resize target must be at least 1x1");
        let xs: Vec<usize> = (0..w).map(|x| nearest_tap(x, w, self.width)).collect();
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = nearest_tap(y, h, self.height);
            data.extend(xs.iter().map(|&sx| self.get(sx, sy)));
        }
        BinaryMask {
            width: w,
            height: h,
            data,
        }
    }
}

// Pixel-centre aligned source coordinate.
fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5
}

fn bilinear_taps(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let s = source_coord(dst, dst_len, src_len).clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn nearest_tap(dst: usize, dst_len: usize, src_len: usize) -> usize {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (s.floor() as usize).min(src_len - 1)
}

pub fn rescale_intensity(img: &GrayImage) -> GrayImage {
    img.rescale_intensity()
}

pub fn resize<R: Raster>(x: &R, w: usize, h: usize) -> R {
    x.resize(w, h)
}

pub fn flip_horizontal<R: Raster>(x: &R) -> R {
    x.flip_horizontal()
}

// ---------------------------------------------------------------------------
// PGM

/// Decode a P2 or P5 PGM byte buffer with maxval at most 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        last_token_at: 0,
    };
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty file"));
    }
    let magic_at = cur.pos;
    let magic = cur.token()?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(Error::parse(magic_at, "expected magic P2 or P5")),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    let maxval_at = cur.last_token_at;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(
            maxval_at,
            format!("maxval {maxval} outside 1..=255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(magic_at, "zero image dimension"));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::parse(cur.pos, "missing whitespace after maxval")),
        }
        let end = cur.pos + n;
        if bytes.len() < end {
            return Err(Error::parse(
                bytes.len(),
                format!("truncated payload: need {n} bytes, found {}", bytes.len() - cur.pos),
            ));
        }
        for (i, &b) in bytes[cur.pos..end].iter().enumerate() {
            if b as usize > maxval {
                return Err(Error::parse(cur.pos + i, "sample exceeds maxval"));
            }
            data.push(b as f64);
        }
    } else {
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(Error::parse(at, "sample exceeds maxval"));
            }
            data.push(v as f64);
        }
    }
    Ok(GrayImage {
        width,
        height,
        data,
    })
}

/// Encode as binary P5 with maxval 255. Values are rounded to the nearest
/// integer.
pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::domain("cannot encode an empty image"));
    }
    if img.data.len() != img.width * img.height {
        return Err(Error::shape("image data length does not match dimensions"));
    }
    let header = format!("P5\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    for (i, &v) in img.data.iter().enumerate() {
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::domain(format!(
                "pixel {i} has value {v} outside [0, 255]"
            )));
        }
        out.push(v.round() as u8);
    }
    Ok(out)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(img)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    load_pgm(path).map(|img| BinaryMask::from_image(&img))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_pgm(&mask.to_image(), path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    last_token_at: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of header"));
        }
        self.last_token_at = start;
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        let at = self.last_token_at;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(at, format!("invalid {what}")))
    }
}
