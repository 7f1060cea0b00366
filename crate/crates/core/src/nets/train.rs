//! Mini-batch training of the stacked networks under the scheduled
//! combination of distance and classification losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

use crate::distance_map::{boundary_of_mask, encode_distance_map};
use crate::error::{Error, Result};
use crate::metrics::overlap_metrics;
use crate::raster::BinaryMask;
use crate::tps::LabeledImage;

use super::adam::{adam_step, AdamState};
use super::loss::{loss_crossentropy, loss_distance_mean, schedule};
use super::model::{argmax_mask, image_tensor, InitScheme, Model, NetConfig};
use super::tensor::Tensor;

/// Which losses drive the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Scheduled combination of distance and classification losses.
    EndToEnd,
    /// Distance loss only; the classifier stays at its initialization.
    BoundaryOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `N`: the schedule runs over steps `0..=N`.
    pub steps: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub image_size: usize,
    pub init: InitScheme,
    pub net: NetConfig,
    /// Validation period in steps; 0 disables periodic validation.
    pub eval_every: usize,
    pub mode: TrainMode,
    /// Start the regression output bias at the logit of the mean training
    /// target instead of 0.
    pub output_prior: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            gamma: 1.0,
            lambda: 1.0,
            lr: 1e-4,
            batch: 8,
            seed: 7,
            image_size: 64,
            init: InitScheme::He,
            net: NetConfig::default(),
            eval_every: 0,
            mode: TrainMode::EndToEnd,
            output_prior: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::domain("steps must be at least 1"));
        }
        if !(self.gamma > 0.0) || !(self.lambda > 0.0) || !(self.lr > 0.0) {
            return Err(Error::domain("gamma, lambda and lr must be positive"));
        }
        if self.batch < 1 {
            return Err(Error::domain("batch must be at least 1"));
        }
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::domain(format!(
                "image size {} is not a positive multiple of 8",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Losses of one optimizer step, averaged over its mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub coef_d: f64,
    pub coef_s: f64,
    pub loss_d: f64,
    pub loss_s: f64,
    pub loss_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<StepRecord>,
    /// `(step, mean Dice of the classifier output)` on the validation set.
    pub validation: Vec<(usize, f64)>,
}

/// An image with its precomputed regression and classification targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor,
    pub target: Vec<f64>,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(item: &LabeledImage, lambda: f64) -> Result<Self> {
        let (w, h) = (item.image.width, item.image.height);
        let contour = boundary_of_mask(&item.mask)?;
        let target = encode_distance_map(&contour, w, h, lambda)?.data;
        Ok(Sample {
            input: image_tensor(&item.image),
            target,
            mask: item.mask.clone(),
        })
    }
}

/// Losses of one sample and their gradients accumulated into `grads`
/// scaled by `scale`. Returns `(L_d, L_s)`; `L_s` is 0 when `with_pixel`
/// is false.
pub fn accumulate_sample(
    model: &Model,
    sample: &Sample,
    coef_d: f64,
    coef_s: f64,
    with_pixel: bool,
    scale: f64,
    grads: &mut [Tensor],
) -> Result<(f64, f64)> {
    let pass = model.forward(&sample.input, with_pixel, true)?;
    let (ld, gd) = loss_distance_mean(&pass.distance.data, &sample.target)?;
    let d_distance = Tensor {
        shape: pass.distance.shape.clone(),
        data: gd.iter().map(|g| g * coef_d * scale).collect(),
    };
    let (ls, d_probs) = match &pass.probs {
        Some(p) => {
            let (ls, mut gp) = loss_crossentropy(p, &sample.mask)?;
            gp.data.iter_mut().for_each(|g| *g *= coef_s * scale);
            (ls, Some(gp))
        }
        None => (0.0, None),
    };
    model.backward(&pass, &d_distance, d_probs.as_ref(), grads)?;
    Ok((ld, ls))
}

/// Seeded reshuffle of all indices each time the previous permutation runs
/// out.
struct EpochSampler {
    rng: Pcg64Mcg,
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        EpochSampler {
            rng: Pcg64Mcg::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Mean Dice of the classifier's argmax mask over `items`.
pub fn mean_dice(model: &Model, items: &[LabeledImage]) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        let pass = model.forward(&image_tensor(&it.image), true, false)?;
        let pred = argmax_mask(pass.probs.as_ref().expect("pixel pass"), it.image.width, it.image.height);
        total += overlap_metrics(&pred, &it.mask)?.dice;
    }
    Ok(total / items.len() as f64)
}

fn check_sizes(items: &[LabeledImage], size: usize) -> Result<()> {
    for it in items {
        if it.image.width != size || it.image.height != size {
            return Err(Error::shape(format!(
                "image is {}x{}, expected {size}x{size}",
                it.image.width, it.image.height
            )));
        }
    }
    Ok(())
}

/// With zero output bias the sigmoid starts at 0.5 everywhere while most
/// targets are near 0; the first updates then drive the whole map into the
/// saturated region, where the thin boundary band no longer receives a
/// usable gradient. Starting at the mean target avoids that collapse.
fn set_output_prior(model: &mut Model, samples: &[Sample]) {
    let (mut sum, mut count) = (0.0, 0usize);
    for s in samples {
        sum += s.target.iter().sum::<f64>();
        count += s.target.len();
    }
    let mean = (sum / count as f64).clamp(1e-6, 1.0 - 1e-6);
    let bias = model.boundary.params.last_mut().expect("output bias");
    bias.data.fill((mean / (1.0 - mean)).ln());
}

/// Train from a fresh initialization. Steps `tau = 0..=N` each take one
/// Adam update on a mini-batch drawn from a per-epoch shuffle.
pub fn train(cfg: &TrainConfig, dataset: &[LabeledImage], validation: &[LabeledImage]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    check_sizes(dataset, cfg.image_size)?;
    check_sizes(validation, cfg.image_size)?;
    let samples = dataset
        .iter()
        .map(|it| Sample::new(it, cfg.lambda))
        .collect::<Result<Vec<_>>>()?;

    let mut model = Model::init(&cfg.net, cfg.lambda, cfg.init, cfg.seed)?;
    if cfg.output_prior {
        set_output_prior(&mut model, &samples);
    }
    let mut adam = AdamState::new(model.params());
    let mut sampler = EpochSampler::new(samples.len(), cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut val = Vec::new();
    let end_to_end = cfg.mode == TrainMode::EndToEnd;
    let scale = 1.0 / cfg.batch as f64;

    for tau in 0..=cfg.steps {
        let (coef_d, coef_s) = if end_to_end {
            schedule(tau, cfg.steps, cfg.gamma)?
        } else {
            (1.0, 0.0)
        };
        let mut grads = model.zero_grads();
        let (mut ld, mut ls) = (0.0, 0.0);
        for _ in 0..cfg.batch {
            let s = &samples[sampler.next()];
            let (d, c) = accumulate_sample(&model, s, coef_d, coef_s, end_to_end, scale, &mut grads)?;
            ld += d * scale;
            ls += c * scale;
        }
        if grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient at step {tau}")));
        }
        adam_step(model.params_mut(), &grads, &mut adam, cfg.lr)?;
        trace.push(StepRecord {
            step: tau,
            coef_d,
            coef_s,
            loss_d: ld,
            loss_s: ls,
            loss_m: coef_d * ld + coef_s * ls,
        });
        let due = cfg.eval_every > 0 && (tau + 1) % cfg.eval_every == 0;
        if !validation.is_empty() && (due || tau == cfg.steps) {
            val.push((tau, mean_dice(&model, validation)?));
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        validation: val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, ShapeParams};

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch: 2,
            image_size: 32,
            net: NetConfig::tiny(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train(&small_cfg(3), &[], &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn wrong_image_size_rejected() {
        let data = gen_dataset(1, &ShapeParams::for_size(40));
        assert!(matches!(train(&small_cfg(3), &data, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn schedule_logged_exactly() {
        let data = gen_dataset(2, &ShapeParams::for_size(32));
        let cfg = TrainConfig {
            gamma: 2.5,
            ..small_cfg(4)
        };
        let out = train(&cfg, &data, &[]).unwrap();
        assert_eq!(out.trace.len(), 5);
        assert_eq!((out.trace[0].coef_d, out.trace[0].coef_s), (1.0, 0.0));
        assert_eq!((out.trace[2].coef_d, out.trace[2].coef_s), (0.5, 1.25));
        assert_eq!((out.trace[4].coef_d, out.trace[4].coef_s), (0.0, 2.5));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = gen_dataset(3, &ShapeParams::for_size(32));
        let a = train(&small_cfg(5), &data, &data[..1]).unwrap();
        let b = train(&small_cfg(5), &data, &data[..1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_prior_sets_only_the_last_bias() {
        let data = gen_dataset(2, &ShapeParams::for_size(32));
        let cfg = small_cfg(1);
        let samples: Vec<Sample> = data.iter().map(|d| Sample::new(d, 1.0).unwrap()).collect();
        let fresh = Model::init(&cfg.net, 1.0, cfg.init, cfg.seed).unwrap();
        let mut m = fresh.clone();
        set_output_prior(&mut m, &samples);
        let n = m.boundary.params.len();
        assert_eq!(m.boundary.params[..n - 1], fresh.boundary.params[..n - 1]);
        let mean: f64 = samples.iter().flat_map(|s| s.target.iter()).sum::<f64>() / (2.0 * 1024.0);
        let b = m.boundary.params[n - 1].data[0];
        assert!((1.0 / (1.0 + (-b).exp()) - mean).abs() < 1e-12);
    }

    #[test]
    fn sampler_visits_each_index_once_per_epoch() {
        let mut s = EpochSampler::new(5, 1);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..5).map(|_| s.next()).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }
}
