use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::rng::sub_seed;
use crate::signal::{ImageData, IMAGE_CHANNELS, IMAGE_SIZE};

/// Stack of 3×3 convolutions, each followed by ReLU and 2×2 max pooling,
/// then a flatten and a single softmax dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub classes: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            height: IMAGE_SIZE,
            width: IMAGE_SIZE,
            channels: IMAGE_CHANNELS,
            conv_layers: 3,
            filters: 64,
            classes: 3,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("channels", self.channels),
            ("conv_layers", self.conv_layers),
            ("filters", self.filters),
            ("classes", self.classes),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        let min = 1usize.checked_shl(self.conv_layers as u32).unwrap_or(usize::MAX);
        if self.height < min || self.width < min {
            problems.push(format!(
                "input {}x{} does not survive {} poolings",
                self.height, self.width, self.conv_layers
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Spatial extent after all poolings.
    pub fn pooled_dims(&self) -> (usize, usize) {
        let mut h = self.height;
        let mut w = self.width;
        for _ in 0..self.conv_layers {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    pub fn closed_form_parameter_count(&self) -> usize {
        let f = self.filters;
        let mut total = 9 * self.channels * f + f;
        total += (self.conv_layers - 1) * (9 * f * f + f);
        let (h, w) = self.pooled_dims();
        total + h * w * f * self.classes + self.classes
    }

    pub(crate) fn to_fields(self) -> Vec<f64> {
        [
            self.height,
            self.width,
            self.channels,
            self.conv_layers,
            self.filters,
            self.classes,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    pub(crate) fn from_fields(f: &[f64]) -> Result<Self> {
        let v = super::integer_fields(f, 6, "cnn")?;
        let cfg = Self {
            height: v[0],
            width: v[1],
            channels: v[2],
            conv_layers: v[3],
            filters: v[4],
            classes: v[5],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

/// Baseline convolutional classifier.
#[derive(Debug, Clone)]
pub struct Cnn {
    cfg: CnnConfig,
    params: ParamStore,
}

impl Cnn {
    pub fn new(cfg: CnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "init", 1));
        let mut s = ParamStore::new();
        let f = cfg.filters;
        let mut cin = cfg.channels;
        for i in 0..cfg.conv_layers {
            s.add(
                format!("conv{i}.w"),
                glorot(&[3, 3, cin, f], 9 * cin, 9 * f, &mut rng),
            );
            s.add(format!("conv{i}.b"), Tensor::zeros(&[f]));
            cin = f;
        }
        let (h, w) = cfg.pooled_dims();
        let flat = h * w * f;
        s.add("dense.w", glorot(&[flat, cfg.classes], flat, cfg.classes, &mut rng));
        s.add("dense.b", Tensor::zeros(&[cfg.classes]));
        Ok(Self { cfg, params: s })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(&self, tape: &Tape, vars: &[Var], image: &dyn ImageData) -> Result<Var> {
        let c = &self.cfg;
        super::check_dims(image, (c.height, c.width, c.channels))?;
        let data = image.pixels().iter().map(|&v| f64::from(v)).collect();
        let mut x = tape.constant(Tensor::new(&[c.height, c.width, c.channels], data)?);
        for i in 0..c.conv_layers {
            x = tape.conv2d(x, vars[2 * i], vars[2 * i + 1])?;
            x = tape.relu(x);
            x = tape.max_pool2(x)?;
        }
        let (h, w) = c.pooled_dims();
        let flat = tape.reshape(x, &[1, h * w * c.filters])?;
        let n = 2 * c.conv_layers;
        let logits = tape.linear(flat, vars[n], vars[n + 1])?;
        Ok(tape.softmax(logits))
    }
}
