//! Flat `key = value` run configuration.
//!
//! Every key is declared in [`KEYS`]; anything else is rejected before a
//! command does any work. Shape parameters left unset scale with `size`.

use std::fmt::Write as _;
use std::path::Path;

use bdseg_core::nets::{InitScheme, NetConfig, TrainConfig, TrainMode};
use bdseg_core::synth::ShapeParams;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const KEYS: &[Key] = &[
    Key { name: "steps", default: "3000", help: "schedule length N; steps 0..=N are run" },
    Key { name: "gamma", default: "1", help: "weight of the classification loss at the end of the schedule" },
    Key { name: "lambda", default: "1", help: "decay of the boundary-distance target exp(-lambda*D)" },
    Key { name: "lr", default: "0.0001", help: "Adam learning rate" },
    Key { name: "batch", default: "8", help: "images per optimizer step" },
    Key { name: "seed", default: "7", help: "initialization and mini-batch seed" },
    Key { name: "size", default: "64", help: "image width and height (multiple of 8)" },
    Key { name: "init", default: "he", help: "filter initialization: he | xavier | normal (std 0.001)" },
    Key { name: "output_prior", default: "true", help: "start the regression output at the mean target" },
    Key { name: "mode", default: "end-to-end", help: "end-to-end | boundary (distance loss only)" },
    Key { name: "eval_every", default: "0", help: "validation period in steps, 0 = only at the end" },
    Key { name: "encoder", default: "12,24,48", help: "output channels of the three stride-2 blocks" },
    Key { name: "deconv", default: "48,24,12", help: "input channels of the three upsampling layers" },
    Key { name: "head", default: "6", help: "channels before the 1x1 regression output" },
    Key { name: "encoder_filter", default: "3", help: "encoder and projection filter size" },
    Key { name: "deconv_filter", default: "5", help: "upsampling filter size" },
    Key { name: "pixel_width", default: "8", help: "hidden channels of the pixel classifier" },
    Key { name: "pixel_filter", default: "3", help: "pixel classifier filter size" },
    Key { name: "synth_seed", default: "7", help: "seed of the synthetic shape generator" },
    Key { name: "n_train", default: "40", help: "synthetic training images (before augmentation)" },
    Key { name: "n_test", default: "10", help: "synthetic held-out images" },
    Key { name: "augment", default: "true", help: "expand the training set with spline warps and mirrors" },
    Key { name: "timing_size", default: "321", help: "side of the resized inputs used for timing" },
    Key { name: "center_jitter", default: "6*size/64", help: "maximum shape centre offset per axis" },
    Key { name: "semi_axis_min", default: "max(10*size/64, 4)", help: "smallest base semi-axis" },
    Key { name: "semi_axis_max", default: "max(20*size/64, 4)", help: "largest base semi-axis" },
    Key { name: "rotation_range", default: "3.141592653589793", help: "rotation drawn from [0, range)" },
    Key { name: "perturbation", default: "0.12", help: "summed harmonic amplitude bound, fraction of radius" },
    Key { name: "interior_gradient", default: "60", help: "intensity ramp across the interior" },
    Key { name: "speckle", default: "0.3", help: "multiplicative speckle strength" },
    Key { name: "background_texture", default: "25", help: "amplitude of the background pattern" },
];

/// Text listing every key with its default, for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (--config FILE, --set KEY=VALUE):\n");
    for k in KEYS {
        let _ = writeln!(s, "  {:<20} {:<20} {}", k.name, k.default, k.help);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub augment: bool,
    pub timing_size: usize,
    center_jitter: Option<f64>,
    semi_axis_min: Option<f64>,
    semi_axis_max: Option<f64>,
    rotation_range: Option<f64>,
    perturbation: Option<f64>,
    interior_gradient: Option<f64>,
    speckle: Option<f64>,
    background_texture: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            synth_seed: 7,
            n_train: 40,
            n_test: 10,
            augment: true,
            timing_size: 321,
            center_jitter: None,
            semi_axis_min: None,
            semi_axis_max: None,
            rotation_range: None,
            perturbation: None,
            interior_gradient: None,
            speckle: None,
            background_texture: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
}

fn triple(key: &str, v: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("{key}: expected three comma-separated counts"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let t = &mut self.train;
        let n: &mut NetConfig = &mut t.net;
        match key {
            "steps" => t.steps = num(key, v)?,
            "gamma" => t.gamma = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "size" => t.image_size = num(key, v)?,
            "init" => t.init = v.parse::<InitScheme>()?,
            "mode" => {
                t.mode = match v {
                    "end-to-end" => TrainMode::EndToEnd,
                    "boundary" => TrainMode::BoundaryOnly,
                    _ => return Err(format!("mode: unknown `{v}` (end-to-end|boundary)")),
                }
            }
            "eval_every" => t.eval_every = num(key, v)?,
            "output_prior" => t.output_prior = num(key, v)?,
            "encoder" => n.encoder = triple(key, v)?,
            "deconv" => n.deconv = triple(key, v)?,
            "head" => n.head = num(key, v)?,
            "encoder_filter" => n.encoder_filter = num(key, v)?,
            "deconv_filter" => n.deconv_filter = num(key, v)?,
            "pixel_width" => n.pixel_width = num(key, v)?,
            "pixel_filter" => n.pixel_filter = num(key, v)?,
            "synth_seed" => self.synth_seed = num(key, v)?,
            "n_train" => self.n_train = num(key, v)?,
            "n_test" => self.n_test = num(key, v)?,
            "augment" => self.augment = num(key, v)?,
            "timing_size" => self.timing_size = num(key, v)?,
            "center_jitter" => self.center_jitter = Some(num(key, v)?),
            "semi_axis_min" => self.semi_axis_min = Some(num(key, v)?),
            "semi_axis_max" => self.semi_axis_max = Some(num(key, v)?),
            "rotation_range" => self.rotation_range = Some(num(key, v)?),
            "perturbation" => self.perturbation = Some(num(key, v)?),
            "interior_gradient" => self.interior_gradient = Some(num(key, v)?),
            "speckle" => self.speckle = Some(num(key, v)?),
            "background_texture" => self.background_texture = Some(num(key, v)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `KEY=VALUE` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Core(bdseg_core::Error::io(p, e)))?;
            cfg.apply_text(&text).map_err(CliError::Usage)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v).map_err(CliError::Usage)?;
        }
        cfg.validate().map_err(CliError::Usage)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        self.shape().validate()?;
        if self.n_train == 0 {
            return Err("n_train must be at least 1".into());
        }
        Ok(())
    }

    pub fn shape(&self) -> ShapeParams {
        let mut p = ShapeParams::for_size(self.train.image_size);
        p.seed = self.synth_seed;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.center_jitter, self.center_jitter);
        set(&mut p.semi_axis_min, self.semi_axis_min);
        set(&mut p.semi_axis_max, self.semi_axis_max);
        set(&mut p.rotation_range, self.rotation_range);
        set(&mut p.perturbation, self.perturbation);
        set(&mut p.interior_gradient, self.interior_gradient);
        set(&mut p.speckle, self.speckle);
        set(&mut p.background_texture, self.background_texture);
        p
    }
}
