//! Central finite-difference check of the analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};
use crate::tps::LabeledImage;

use super::model::{InitScheme, Model, NetConfig};
use super::train::{accumulate_sample, Sample};

pub const STEP: f64 = 1e-5;
/// Pre-activations closer to zero than this count as sitting on a ReLU kink.
pub const KINK_MARGIN: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms. A central
/// difference at `h = 1e-5` on a loss of order 1 carries rounding error
/// near `1e-16 / 1e-5`, so relative error is meaningless far below here.
pub const ABS_FLOOR: f64 = 1e-6;
const SIDE: usize = 8;
const ATTEMPTS: usize = 200;

/// `EndToEnd` checks `L_m` at mid-schedule with `gamma = 1`; `DistanceOnly`
/// checks `L_d` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckLoss {
    EndToEnd,
    DistanceOnly,
}

fn toy_sample(rng: &mut Pcg64Mcg) -> Result<LabeledImage> {
    let data = (0..SIDE * SIDE).map(|_| rng.random_range(0.0..255.0)).collect();
    let image = GrayImage::new(SIDE, SIDE, data)?;
    let (x0, y0) = (rng.random_range(1..3usize), rng.random_range(1..3usize));
    let (x1, y1) = (rng.random_range(5..7usize), rng.random_range(5..7usize));
    let mut mask = BinaryMask::empty(SIDE, SIDE);
    for y in y0..=y1 {
        for x in x0..=x1 {
            mask.set(x, y, true);
        }
    }
    LabeledImage::new(image, mask)
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Draws parameters and an 8x8 sample from `seed`, redrawing while any
/// ReLU input lies within [`KINK_MARGIN`] of zero, then returns the largest
/// relative error between analytic and central-difference gradients.
pub fn grad_check(cfg: &NetConfig, seed: u64, which: CheckLoss) -> Result<f64> {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let with_pixel = which == CheckLoss::EndToEnd;
    let (cd, cs) = if with_pixel { (0.5, 0.5) } else { (1.0, 0.0) };
    for _ in 0..ATTEMPTS {
        let mut model = Model::init(cfg, 1.0, InitScheme::Xavier, rng.random())?;
        // Zero biases leave exact zeros at ReLU inputs wherever a receptive
        // field is all zero.
        for t in model.params_mut().filter(|t| t.shape.len() == 1) {
            t.data.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
        let sample = Sample::new(&toy_sample(&mut rng)?, 1.0)?;
        let pass = model.forward(&sample.input, true, false)?;
        let mut pre = model.boundary.relu_inputs(&sample.input)?;
        if with_pixel {
            pre.extend(model.pixel.relu_inputs(&super::model::replicate3(&pass.distance))?);
        }
        if min_abs(&pre) < KINK_MARGIN {
            continue;
        }
        return max_relative_error(model, &sample, cd, cs, with_pixel);
    }
    Err(Error::Numeric(format!(
        "no kink-free draw in {ATTEMPTS} attempts for seed {seed}"
    )))
}

fn objective(model: &Model, sample: &Sample, cd: f64, cs: f64, with_pixel: bool) -> Result<f64> {
    let mut scratch = model.zero_grads();
    let (ld, ls) = accumulate_sample(model, sample, cd, cs, with_pixel, 1.0, &mut scratch)?;
    Ok(cd * ld + cs * ls)
}

fn max_relative_error(mut model: Model, sample: &Sample, cd: f64, cs: f64, with_pixel: bool) -> Result<f64> {
    let mut grads = model.zero_grads();
    accumulate_sample(&model, sample, cd, cs, with_pixel, 1.0, &mut grads)?;
    let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
    let mut worst: f64 = 0.0;
    for (t, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            let orig = model.params_mut().nth(t).expect("tensor").data[j];
            model.params_mut().nth(t).expect("tensor").data[j] = orig + STEP;
            let up = objective(&model, sample, cd, cs, with_pixel)?;
            model.params_mut().nth(t).expect("tensor").data[j] = orig - STEP;
            let down = objective(&model, sample, cd, cs, with_pixel)?;
            model.params_mut().nth(t).expect("tensor").data[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[t].data[j];
            let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
