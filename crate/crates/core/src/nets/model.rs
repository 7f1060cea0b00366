//! The boundary-distance regression network and the pixel classification
//! network stacked on top of it.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};
use rand_pcg::Pcg64Mcg;

use crate::distance_map::DistanceMap;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

use super::layers::{self, LayerKind, LayerSpec, Saved};
use super::tensor::Tensor;

/// Lower clamp on the regression output, keeping predictions in `(0, 1]`.
pub const OUTPUT_FLOOR: f64 = 1e-12;

/// Standard deviation of the default filter initialization.
pub const INIT_STD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Filters drawn from `N(0, 0.001^2)`.
    Normal,
    /// Filters uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// Filters uniform on `[-a, a]` with `a = sqrt(6 / fan_in)`, which keeps
    /// activation variance through ReLU layers.
    He,
}

impl std::str::FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "normal" => Ok(InitScheme::Normal),
            "xavier" => Ok(InitScheme::Xavier),
            "he" => Ok(InitScheme::He),
            _ => Err(format!("unknown init scheme `{s}` (normal|xavier|he)")),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::Normal => "normal",
            InitScheme::Xavier => "xavier",
            InitScheme::He => "he",
        })
    }
}

/// Channel widths of both networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    /// Output channels of the three stride-2 encoder blocks.
    pub encoder: [usize; 3],
    /// Input channels of the three upsampling layers; the projection layers
    /// produce `deconv[0]` channels.
    pub deconv: [usize; 3],
    /// Channels after the last upsampling layer, before the 1x1 output.
    pub head: usize,
    pub encoder_filter: usize,
    pub deconv_filter: usize,
    /// Width of the pixel classifier's hidden layers.
    pub pixel_width: usize,
    pub pixel_filter: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            encoder: [12, 24, 48],
            deconv: [48, 24, 12],
            head: 6,
            encoder_filter: 3,
            deconv_filter: 5,
            pixel_width: 8,
            pixel_filter: 3,
        }
    }
}

impl NetConfig {
    /// Boundary network: encoder, projection, upsampling, 1x1 output.
    pub fn boundary_layers(&self) -> Vec<LayerSpec> {
        let [e1, e2, e3] = self.encoder;
        let [d1, d2, d3] = self.deconv;
        let (ke, kd) = (self.encoder_filter, self.deconv_filter);
        vec![
            LayerSpec::conv_s2(1, e1, ke),
            LayerSpec::relu(e1),
            LayerSpec::conv_s2(e1, e2, ke),
            LayerSpec::relu(e2),
            LayerSpec::conv_s2(e2, e3, ke),
            LayerSpec::relu(e3),
            LayerSpec::conv(e3, d1, ke),
            LayerSpec::relu(d1),
            LayerSpec::conv(d1, d1, ke),
            LayerSpec::relu(d1),
            LayerSpec::deconv(d1, d2, kd),
            LayerSpec::relu(d2),
            LayerSpec::deconv(d2, d3, kd),
            LayerSpec::relu(d3),
            LayerSpec::deconv(d3, self.head, kd),
            LayerSpec::relu(self.head),
            LayerSpec::conv(self.head, 1, 1),
        ]
    }

    /// Pixel network: three conv+ReLU layers on the 3-channel replicated
    /// distance map, a 1x1 projection to two logits and a softmax.
    pub fn pixel_layers(&self) -> Vec<LayerSpec> {
        let (p, k) = (self.pixel_width, self.pixel_filter);
        vec![
            LayerSpec::conv(3, p, k),
            LayerSpec::relu(p),
            LayerSpec::conv(p, p, k),
            LayerSpec::relu(p),
            LayerSpec::conv(p, p, k),
            LayerSpec::relu(p),
            LayerSpec::conv(p, 2, 1),
            LayerSpec::softmax2(),
        ]
    }

    /// A network of a few thousand parameters for gradient checks.
    pub fn tiny() -> Self {
        NetConfig {
            encoder: [2, 3, 3],
            deconv: [4, 3, 2],
            head: 2,
            encoder_filter: 3,
            deconv_filter: 5,
            pixel_width: 3,
            pixel_filter: 3,
        }
    }
}

/// A layer stack with its parameters, two tensors (weight, bias) per
/// parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub specs: Vec<LayerSpec>,
    pub params: Vec<Tensor>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    saved: Vec<Saved>,
}

impl Sequential {
    pub fn new(specs: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self> {
        let mut expected = Vec::new();
        let mut ch: Option<usize> = None;
        for s in &specs {
            s.validate()?;
            if let Some(c) = ch {
                if c != s.in_ch {
                    return Err(Error::shape(format!("layer {s:?} follows {c} channels")));
                }
            }
            ch = Some(s.out_ch);
            if let Some(ws) = s.weight_shape() {
                expected.push(ws.to_vec());
                expected.push(vec![s.out_ch]);
            }
        }
        if expected.len() != params.len() || expected.iter().zip(&params).any(|(e, p)| *e != p.shape) {
            return Err(Error::shape("parameter tensors do not match the layer table"));
        }
        Ok(Sequential { specs, params })
    }

    pub fn init(specs: Vec<LayerSpec>, scheme: InitScheme, rng: &mut Pcg64Mcg) -> Result<Self> {
        let mut params = Vec::new();
        for s in &specs {
            s.validate()?;
            let Some(ws) = s.weight_shape() else { continue };
            let n: usize = ws.iter().product();
            let data: Vec<f64> = match scheme {
                InitScheme::Normal => {
                    let d = Normal::new(0.0, INIT_STD).expect("valid normal");
                    (0..n).map(|_| d.sample(rng)).collect()
                }
                InitScheme::Xavier | InitScheme::He => {
                    let (fi, fo) = s.fans();
                    let a = if scheme == InitScheme::He {
                        (6.0 / fi as f64).sqrt()
                    } else {
                        (6.0 / (fi + fo) as f64).sqrt()
                    };
                    let d = Uniform::new_inclusive(-a, a).expect("valid range");
                    (0..n).map(|_| d.sample(rng)).collect()
                }
            };
            params.push(Tensor::new(ws.to_vec(), data)?);
            params.push(Tensor::zeros(&[s.out_ch]));
        }
        Sequential::new(specs, params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&self, x: &Tensor, tape: Option<&mut Tape>) -> Result<Tensor> {
        let keep = tape.is_some();
        let mut saved = Vec::new();
        let mut cur = x.clone();
        let mut p = 0;
        for s in &self.specs {
            let (w, b) = if s.kind.has_params() {
                p += 2;
                (Some(&self.params[p - 2]), Some(&self.params[p - 1]))
            } else {
                (None, None)
            };
            let (y, sv) = layers::forward(s, w, b, &cur, keep)?;
            if let Some(sv) = sv {
                saved.push(sv);
            }
            cur = y;
        }
        if let Some(t) = tape {
            t.saved = saved;
        }
        Ok(cur)
    }

    /// Backpropagate `dy`, accumulating into `grads` (shaped like `params`).
    pub fn backward(&self, tape: &Tape, dy: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let mut g = dy.clone();
        let mut p = self.params.len();
        for (s, sv) in self.specs.iter().zip(&tape.saved).rev() {
            if s.kind.has_params() {
                p -= 2;
                let (gw, gb) = grads[p..p + 2].split_at_mut(1);
                g = layers::backward(s, Some(&self.params[p]), sv, &g, Some(&mut gw[0]), Some(&mut gb[0]))?;
            } else {
                g = layers::backward(s, None, sv, &g, None, None)?;
            }
        }
        Ok(g)
    }

    /// Pre-activation values feeding every ReLU, for kink diagnostics.
    pub fn relu_inputs(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let mut cur = x.clone();
        let mut p = 0;
        for s in &self.specs {
            if s.kind == LayerKind::Relu {
                out.extend_from_slice(&cur.data);
            }
            let (w, b) = if s.kind.has_params() {
                p += 2;
                (Some(&self.params[p - 2]), Some(&self.params[p - 1]))
            } else {
                (None, None)
            };
            cur = layers::forward(s, w, b, &cur, false)?.0;
        }
        Ok(out)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { saved: Vec::new() }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Both networks plus the decay parameter their targets were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub lambda: f64,
    pub boundary: Sequential,
    pub pixel: Sequential,
}

/// Forward state of one image through the full model.
#[derive(Debug, Clone)]
pub struct Pass {
    pub boundary_tape: Tape,
    pub pixel_tape: Option<Tape>,
    /// Sigmoid input.
    pub logit: Tensor,
    /// Regression output in `(0, 1]`, shape `(1, h, w)`.
    pub distance: Tensor,
    /// Class probabilities, shape `(2, h, w)`; channel 1 is foreground.
    pub probs: Option<Tensor>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Image intensities in `[0, 255]` as a `(1, h, w)` network input.
pub fn image_tensor(img: &GrayImage) -> Tensor {
    Tensor {
        shape: vec![1, img.height, img.width],
        data: img.data.iter().map(|v| v / 255.0).collect(),
    }
}

/// Stack the regression output three times as classifier input.
pub(crate) fn replicate3(d: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(3 * d.len());
    for _ in 0..3 {
        data.extend_from_slice(&d.data);
    }
    Tensor {
        shape: vec![3, d.shape[1], d.shape[2]],
        data,
    }
}

impl Model {
    pub fn init(cfg: &NetConfig, lambda: f64, scheme: InitScheme, seed: u64) -> Result<Self> {
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let boundary = Sequential::init(cfg.boundary_layers(), scheme, &mut rng)?;
        let pixel = Sequential::init(cfg.pixel_layers(), scheme, &mut rng)?;
        Ok(Model {
            lambda,
            boundary,
            pixel,
        })
    }

    pub fn param_count(&self) -> usize {
        self.boundary.param_count() + self.pixel.param_count()
    }

    /// All parameter tensors, boundary network first.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.boundary.params.iter().chain(&self.pixel.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.boundary.params.iter_mut().chain(self.pixel.params.iter_mut())
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().map(Tensor::zeros_like).collect()
    }

    fn check_input(x: &Tensor) -> Result<()> {
        let (c, h, w) = x.chw()?;
        if c != 1 || h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "input must be one channel with sides divisible by 8, got {c}x{h}x{w}"
            )));
        }
        Ok(())
    }

    /// Run the regression network, and the classifier when `with_pixel`.
    pub fn forward(&self, x: &Tensor, with_pixel: bool, keep: bool) -> Result<Pass> {
        Self::check_input(x)?;
        let mut boundary_tape = Tape::new();
        let logit = self.boundary.forward(x, keep.then_some(&mut boundary_tape))?;
        let distance = Tensor {
            shape: logit.shape.clone(),
            data: logit.data.iter().map(|&z| sigmoid(z).max(OUTPUT_FLOOR)).collect(),
        };
        let (pixel_tape, probs) = if with_pixel {
            let mut tape = Tape::new();
            let p = self.pixel.forward(&replicate3(&distance), keep.then_some(&mut tape))?;
            (keep.then_some(tape), Some(p))
        } else {
            (None, None)
        };
        Ok(Pass {
            boundary_tape,
            pixel_tape,
            logit,
            distance,
            probs,
        })
    }

    /// Backpropagate loss gradients with respect to the regression output
    /// and (optionally) the class probabilities.
    pub fn backward(
        &self,
        pass: &Pass,
        d_distance: &Tensor,
        d_probs: Option<&Tensor>,
        grads: &mut [Tensor],
    ) -> Result<()> {
        let nb = self.boundary.params.len();
        let (gb, gp) = grads.split_at_mut(nb);
        let mut d_dist = d_distance.clone();
        if let (Some(dp), Some(tape)) = (d_probs, pass.pixel_tape.as_ref()) {
            let d_in = self.pixel.backward(tape, dp, gp)?;
            let n = d_dist.len();
            for i in 0..n {
                d_dist.data[i] += d_in.data[i] + d_in.data[n + i] + d_in.data[2 * n + i];
            }
        }
        let d_logit = Tensor {
            shape: d_dist.shape.clone(),
            data: d_dist
                .data
                .iter()
                .zip(&pass.logit.data)
                .map(|(&g, &z)| {
                    let s = sigmoid(z);
                    if s > OUTPUT_FLOOR {
                        g * s * (1.0 - s)
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        self.boundary.backward(&pass.boundary_tape, &d_logit, gb)?;
        Ok(())
    }

    /// Predicted distance map; image sides must be divisible by 8.
    pub fn predict_distance(&self, img: &GrayImage) -> Result<DistanceMap> {
        let pass = self.forward(&image_tensor(img), false, false)?;
        DistanceMap::new(img.width, img.height, pass.distance.data, self.lambda)
    }

    /// Foreground where the classifier's foreground probability exceeds the
    /// background probability.
    pub fn predict_mask(&self, img: &GrayImage) -> Result<BinaryMask> {
        let pass = self.forward(&image_tensor(img), true, false)?;
        Ok(argmax_mask(&pass.probs.expect("pixel pass"), img.width, img.height))
    }

    /// Like [`Model::predict_distance`] for any size: zero-pads right and
    /// bottom to a multiple of 8 and crops the result.
    pub fn predict_distance_any(&self, img: &GrayImage) -> Result<DistanceMap> {
        let padded = pad_to_multiple(img, 8);
        let full = self.predict_distance(&padded)?;
        Ok(DistanceMap {
            width: img.width,
            height: img.height,
            data: crop(&full.data, padded.width, img.width, img.height),
            lambda: full.lambda,
        })
    }

    pub fn predict_mask_any(&self, img: &GrayImage) -> Result<BinaryMask> {
        let padded = pad_to_multiple(img, 8);
        let full = self.predict_mask(&padded)?;
        Ok(BinaryMask {
            width: img.width,
            height: img.height,
            data: crop(&full.data, padded.width, img.width, img.height),
        })
    }
}

pub fn argmax_mask(probs: &Tensor, w: usize, h: usize) -> BinaryMask {
    let n = w * h;
    BinaryMask {
        width: w,
        height: h,
        data: (0..n).map(|i| probs.data[n + i] > probs.data[i]).collect(),
    }
}

fn pad_to_multiple(img: &GrayImage, m: usize) -> GrayImage {
    let (w, h) = (img.width.div_ceil(m) * m, img.height.div_ceil(m) * m);
    if (w, h) == (img.width, img.height) {
        return img.clone();
    }
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..img.height {
        out.data[y * w..y * w + img.width].copy_from_slice(&img.data[y * img.width..(y + 1) * img.width]);
    }
    out
}

fn crop<T: Copy>(data: &[T], stride: usize, w: usize, h: usize) -> Vec<T> {
    (0..h).flat_map(|y| data[y * stride..y * stride + w].iter().copied()).collect()
}
