//! Synthetic labeled images: perturbed ellipses with a graded interior, a
//! bright rim, multiplicative speckle and a textured background.
//!
//! Every sample is a pure function of `(seed, index)`. The generator is
//! PCG32 (XSH-RR output, 64-bit LCG state with multiplier
//! `6364136223846793005` and increment `2 * index + 1`) seeded with state
//! `seed`. Uniform reals take the top 53 bits of a 64-bit draw, where a
//! 64-bit draw is two consecutive 32-bit outputs, low word first.
//!
//! Draw order per sample: centre offset x, y; major and minor semi-axes;
//! rotation; three harmonic amplitudes; three harmonic phases; gradient
//! direction; four background phases; then one speckle variate per pixel in
//! raster order.

use std::f64::consts::PI;

use rand::Rng;
use rand_pcg::Pcg32;

use crate::raster::{BinaryMask, GrayImage};
use crate::tps::LabeledImage;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    /// Output width and height.
    pub size: usize,
    /// Maximum centre offset from the image centre, per axis.
    pub center_jitter: f64,
    pub semi_axis_min: f64,
    pub semi_axis_max: f64,
    /// Rotation drawn uniformly from `[0, rotation_range)`.
    pub rotation_range: f64,
    /// Upper bound on the summed harmonic amplitudes, as a fraction of radius.
    pub perturbation: f64,
    /// Intensity swing of the linear ramp across the interior.
    pub interior_gradient: f64,
    /// Speckle strength; intensities are multiplied by `1 + speckle * u`,
    /// `u` uniform on `[-1, 1]`.
    pub speckle: f64,
    /// Amplitude of the low-frequency background pattern.
    pub background_texture: f64,
    pub seed: u64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams::for_size(64)
    }
}

impl ShapeParams {
    /// Defaults scaled to an image of `size` x `size` pixels.
    pub fn for_size(size: usize) -> Self {
        let k = size as f64 / 64.0;
        ShapeParams {
            size,
            center_jitter: 6.0 * k,
            semi_axis_min: (10.0 * k).max(4.0),
            semi_axis_max: (20.0 * k).max(4.0),
            rotation_range: PI,
            perturbation: 0.12,
            interior_gradient: 60.0,
            speckle: 0.3,
            background_texture: 25.0,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.size < 8 {
            return Err(format!("size {} is below 8", self.size));
        }
        if !(0.0..0.3).contains(&self.perturbation) {
            return Err(format!("perturbation {} outside [0, 0.3)", self.perturbation));
        }
        if !(self.semi_axis_min >= 4.0 && self.semi_axis_max >= self.semi_axis_min) {
            return Err("semi-axes must satisfy 4 <= min <= max".into());
        }
        if self.speckle < 0.0 || self.center_jitter < 0.0 {
            return Err("speckle and centre jitter must be non-negative".into());
        }
        Ok(())
    }
}

/// Closed-form description of one sampled shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGeometry {
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
    /// `(amplitude, phase)` for harmonics 2, 3, 4.
    pub harmonics: [(f64, f64); 3],
}

impl ShapeGeometry {
    /// Boundary radius in direction `theta` (image frame).
    pub fn radius(&self, theta: f64) -> f64 {
        let phi = theta - self.rotation;
        let (a, b) = (self.semi_major, self.semi_minor);
        let base = a * b / ((b * phi.cos()).powi(2) + (a * phi.sin()).powi(2)).sqrt();
        let bump: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(i, &(amp, ph))| amp * ((i as f64 + 2.0) * theta + ph).cos())
            .sum();
        base * (1.0 + bump)
    }

    /// Signed radial offset of a point from the boundary (negative inside).
    pub fn radial_offset(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let rho = (dx * dx + dy * dy).sqrt();
        rho - self.radius(dy.atan2(dx))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.radial_offset(x, y) <= 0.0
    }
}

/// A sample before intensity rescaling, with its geometry.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub geometry: ShapeGeometry,
    pub image: GrayImage,
    pub mask: BinaryMask,
}

const BACKGROUND_LEVEL: f64 = 60.0;
const INTERIOR_LEVEL: f64 = 110.0;
const RIM_BOOST: f64 = 70.0;
const RIM_HALF_WIDTH: f64 = 1.5;

pub fn sample_raw(params: &ShapeParams, index: u64) -> RawSample {
    let mut rng = Pcg32::new(params.seed, index);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();

    let size = params.size as f64;
    let mid = (size - 1.0) / 2.0;
    let cx = mid + uniform(-params.center_jitter, params.center_jitter);
    let cy = mid + uniform(-params.center_jitter, params.center_jitter);
    let major = uniform(params.semi_axis_min, params.semi_axis_max);
    let minor = uniform(params.semi_axis_min, major);
    let rotation = uniform(0.0, params.rotation_range);
    let amps = [0; 3].map(|_| uniform(0.0, params.perturbation / 3.0));
    let phases = [0; 3].map(|_| uniform(0.0, 2.0 * PI));
    let grad_dir = uniform(0.0, 2.0 * PI);
    let tex = [0; 4].map(|_| uniform(0.0, 2.0 * PI));

    let geometry = ShapeGeometry {
        center: (cx, cy),
        semi_major: major,
        semi_minor: minor,
        rotation,
        harmonics: [
            (amps[0], phases[0]),
            (amps[1], phases[1]),
            (amps[2], phases[2]),
        ],
    };

    let n = params.size;
    let (gx, gy) = (grad_dir.cos(), grad_dir.sin());
    let mut image = GrayImage::filled(n, n, 0.0);
    let mut mask = BinaryMask::empty(n, n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64, y as f64);
            let off = geometry.radial_offset(fx, fy);
            let inside = off <= 0.0;
            let (u, v) = (fx / size, fy / size);
            let background = BACKGROUND_LEVEL
                + params.background_texture
                    * 0.5
                    * ((2.0 * PI * (1.5 * u + 0.5 * v) + tex[0]).sin()
                        + (2.0 * PI * (0.7 * u - 1.3 * v) + tex[1]).sin() * (tex[2]).cos()
                        + 0.5 * (2.0 * PI * 2.5 * v + tex[3]).sin());
            let mut value = if inside {
                let along = ((fx - cx) * gx + (fy - cy) * gy) / (2.0 * major);
                INTERIOR_LEVEL + params.interior_gradient * along
            } else {
                background
            };
            if off.abs() <= RIM_HALF_WIDTH {
                value += RIM_BOOST;
            }
            let speckle = 1.0 + params.speckle * uniform(-1.0, 1.0);
            image.data[y * n + x] = (value * speckle).max(0.0);
            mask.data[y * n + x] = inside;
        }
    }
    RawSample {
        geometry,
        image,
        mask,
    }
}

pub fn gen_shape(params: &ShapeParams, index: u64) -> LabeledImage {
    let raw = sample_raw(params, index);
    LabeledImage {
        image: raw.image.rescale_intensity(),
        mask: raw.mask,
    }
}

/// Samples `0..n`.
pub fn gen_dataset(n: usize, params: &ShapeParams) -> Vec<LabeledImage> {
    gen_range(params, 0, n as u64)
}

/// Samples `start..start + count`.
pub fn gen_range(params: &ShapeParams, start: u64, count: u64) -> Vec<LabeledImage> {
    (start..start + count).map(|i| gen_shape(params, i)).collect()
}
