//! Boundary-distance encoding.
//!
//! A mask boundary is turned into a map `d(p) = exp(-lambda * D(p))` where
//! `D(p)` is the Euclidean distance from `p` to the nearest boundary pixel.
//! Boundary pixels therefore carry exactly `1.0` and values decay towards
//! zero away from the contour.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// Integer pixel coordinate, `x` to the right and `y` down.
pub type Pixel = (i64, i64);

/// A set of boundary pixels. Order is not significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub lambda: f64,
}

impl DistanceMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>, lambda: f64) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "distance map length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(DistanceMap {
            width,
            height,
            data,
            lambda,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Threshold value separating boundary from non-boundary pixels.
    pub fn threshold(&self) -> f64 {
        (-self.lambda).exp()
    }
}

/// Foreground pixels with a background (or out-of-image) 4-neighbour.
pub fn boundary_of_mask(mask: &BinaryMask) -> Result<Contour> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.get(x as usize, y as usize);
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            if !inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1) {
                points.push((x, y));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::domain("mask has no foreground pixels"));
    }
    Ok(Contour { points })
}

/// Exhaustive minimum Euclidean distance from `p` to the contour.
pub fn min_boundary_distance(p: Pixel, c: &Contour) -> f64 {
    c.points
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = ((x - p.0) as f64, (y - p.1) as f64);
            dx * dx + dy * dy
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

pub fn encode_distance_map(c: &Contour, w: usize, h: usize, lambda: f64) -> Result<DistanceMap> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if c.points.is_empty() {
        return Err(Error::domain("contour is empty"));
    }
    let mut seeds = vec![false; w * h];
    for &(x, y) in &c.points {
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return Err(Error::domain(format!("contour point ({x}, {y}) outside {w}x{h}")));
        }
        seeds[y as usize * w + x as usize] = true;
    }
    let data = squared_edt(&seeds, w, h)
        .into_iter()
        .map(|d2| (-lambda * d2.sqrt()).exp())
        .collect();
    Ok(DistanceMap {
        width: w,
        height: h,
        data,
        lambda,
    })
}

/// Pixels whose value is at least `exp(-lambda)`, i.e. implied distance of at
/// most one pixel.
pub fn decode_boundary(pred: &DistanceMap) -> BinaryMask {
    let t = pred.threshold();
    BinaryMask {
        width: pred.width,
        height: pred.height,
        data: pred.data.iter().map(|&v| v >= t).collect(),
    }
}

/// Exact squared Euclidean distance to the nearest seed, by separable lower
/// envelopes of parabolas. Non-seed pixels of an image without seeds stay
/// infinite.
pub fn squared_edt(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        parabola_envelope(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        parabola_envelope(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn parabola_envelope(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

// ---------------------------------------------------------------------------
// Persistence

const DMAP_MAGIC: &[u8; 4] = b"DMAP";
const DMAP_HEADER: usize = 16;

/// Raw raster: `"DMAP"`, width and height as little-endian `u32`, lambda as
/// little-endian `f32`, then `width * height` little-endian `f64` values.
pub fn encode_dmap(map: &DistanceMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(DMAP_HEADER + 8 * map.data.len());
    out.extend_from_slice(DMAP_MAGIC);
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.lambda as f32).to_le_bytes());
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dmap(bytes: &[u8]) -> Result<DistanceMap> {
    if bytes.len() < DMAP_HEADER {
        return Err(Error::parse(bytes.len(), "truncated DMAP header"));
    }
    if &bytes[..4] != DMAP_MAGIC {
        return Err(Error::parse(0, "bad DMAP magic"));
    }
    let word = |at: usize| [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]];
    let width = u32::from_le_bytes(word(4)) as usize;
    let height = u32::from_le_bytes(word(8)) as usize;
    let lambda = f32::from_le_bytes(word(12)) as f64;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(4, "DMAP dimensions overflow"))?;
    let need = DMAP_HEADER + 8 * n;
    if bytes.len() != need {
        return Err(Error::parse(
            bytes.len().min(need),
            format!("DMAP payload should be {need} bytes, file has {}", bytes.len()),
        ));
    }
    let data = bytes[DMAP_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(DistanceMap {
        width,
        height,
        data,
        lambda,
    })
}

pub fn load_dmap(path: impl AsRef<Path>) -> Result<DistanceMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dmap(&bytes)
}

pub fn save_dmap(map: &DistanceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dmap(map)).map_err(|e| Error::io(path, e))
}

/// `round(255 * d)` visualization, clamped into `[0, 255]`.
pub fn heatmap(map: &DistanceMap) -> GrayImage {
    GrayImage {
        width: map.width,
        height: map.height,
        data: map
            .data
            .iter()
            .map(|&d| (255.0 * d).round().clamp(0.0, 255.0))
            .collect(),
    }
}
