//! The compact vision transformer, the baseline CNN and their shared
//! train/predict contract.

mod cnn;
mod patches;
mod train;
mod vit;

use std::path::Path;
use std::time::Instant;

pub use cnn::{Cnn, CnnConfig};
pub use patches::{assemble_patches, center_pixels, extract_patches};
pub use train::{train, EpochRecord, History, LabeledSet};
pub use vit::{ViTConfig, Vit};

use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint, CheckpointEntry, ParamStore, Tape, Tensor, Var};
use crate::signal::{Class, ImageData};

/// Warm-up runs before latency sampling.
pub const LATENCY_WARMUPS: usize = 5;
/// Timed runs averaged for a latency figure.
pub const LATENCY_RUNS: usize = 30;

pub(crate) fn check_dims(image: &dyn ImageData, want: (usize, usize, usize)) -> Result<()> {
    let got = image.dims();
    if got != want {
        return Err(Error::Shape(format!(
            "image is {}x{}x{}, model expects {}x{}x{}",
            got.0, got.1, got.2, want.0, want.1, want.2
        )));
    }
    Ok(())
}

pub(crate) fn integer_fields(f: &[f64], n: usize, arch: &str) -> Result<Vec<usize>> {
    if f.len() != n || f.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > 1e9) {
        return Err(Error::format("NNCK", format!("malformed {arch} config record")));
    }
    Ok(f.iter().map(|&v| v as usize).collect())
}

/// Anything that maps an image to class probabilities. Implementations
/// must be safe to share between threads.
pub trait Classifier: Send + Sync {
    fn probabilities(&self, image: &dyn ImageData) -> Result<Vec<f64>>;

    /// Patch size the classifier was trained for, if it depends on one.
    fn patch_size(&self) -> Option<usize> {
        None
    }
}

impl Classifier for Model {
    fn probabilities(&self, image: &dyn ImageData) -> Result<Vec<f64>> {
        Model::probabilities(self, image)
    }

    fn patch_size(&self) -> Option<usize> {
        Model::patch_size(self)
    }
}

/// Argmax class and its probability under `model`.
pub fn classify(model: &dyn Classifier, image: &dyn ImageData) -> Result<(Class, f64)> {
    let probs = model.probabilities(image)?;
    let (i, p) = argmax(&probs);
    let class = Class::from_index(i)
        .ok_or_else(|| Error::Shape(format!("classifier returned {} classes", probs.len())))?;
    Ok((class, p))
}

/// Either classifier behind one interface.
#[derive(Debug, Clone)]
pub enum Model {
    Vit(Vit),
    Cnn(Cnn),
}

impl Model {
    pub fn vit(cfg: ViTConfig, seed: u64) -> Result<Self> {
        Vit::new(cfg, seed).map(Model::Vit)
    }

    pub fn cnn(cfg: CnnConfig, seed: u64) -> Result<Self> {
        Cnn::new(cfg, seed).map(Model::Cnn)
    }

    pub fn arch(&self) -> &'static str {
        match self {
            Model::Vit(_) => "vit",
            Model::Cnn(_) => "cnn",
        }
    }

    /// Patch size the model consumes, if any.
    pub fn patch_size(&self) -> Option<usize> {
        match self {
            Model::Vit(v) => Some(v.config().patch_size),
            Model::Cnn(_) => None,
        }
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        match self {
            Model::Vit(v) => {
                let c = v.config();
                (c.height, c.width, c.channels)
            }
            Model::Cnn(m) => {
                let c = m.config();
                (c.height, c.width, c.channels)
            }
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Vit(v) => v.params(),
            Model::Cnn(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Vit(v) => v.params_mut(),
            Model::Cnn(c) => c.params_mut(),
        }
    }

    /// Trainable scalars counted from the parameter store.
    pub fn parameter_count(&self) -> usize {
        self.params().scalar_count()
    }

    /// Probabilities `[1, classes]` on `tape`, with `vars` bound from
    /// [`Model::params`].
    pub fn forward(&self, tape: &Tape, vars: &[Var], image: &dyn ImageData) -> Result<Var> {
        match self {
            Model::Vit(v) => v.forward(tape, vars, image),
            Model::Cnn(c) => c.forward(tape, vars, image),
        }
    }

    /// Class probabilities for one image.
    pub fn probabilities(&self, image: &dyn ImageData) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.params().bind_frozen(&tape);
        let p = self.forward(&tape, &vars, image)?;
        let probs = tape.value(p).data().to_vec();
        Ok(probs)
    }

    /// Probabilities plus the wall-clock seconds spent in the forward pass.
    pub fn predict(&self, image: &dyn ImageData) -> Result<(Vec<f64>, f64)> {
        let start = Instant::now();
        let probs = self.probabilities(image)?;
        Ok((probs, start.elapsed().as_secs_f64()))
    }

    /// Mean forward latency over [`LATENCY_RUNS`] runs after
    /// [`LATENCY_WARMUPS`] untimed ones.
    pub fn mean_latency(&self, image: &dyn ImageData) -> Result<f64> {
        for _ in 0..LATENCY_WARMUPS {
            self.probabilities(image)?;
        }
        let mut total = 0.0;
        for _ in 0..LATENCY_RUNS {
            total += self.predict(image)?.1;
        }
        Ok(total / LATENCY_RUNS as f64)
    }

    /// Argmax class and its probability.
    pub fn classify(&self, image: &dyn ImageData) -> Result<(Class, f64)> {
        classify(self, image)
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        let (name, fields) = match self {
            Model::Vit(v) => ("config:vit", v.config().to_fields()),
            Model::Cnn(c) => ("config:cnn", c.config().to_fields()),
        };
        let n = fields.len();
        let mut entries = vec![CheckpointEntry {
            name: name.into(),
            tensor: Tensor::new(&[n], fields).expect("config record is non-empty"),
        }];
        entries.extend(self.params().iter().map(|(name, t)| CheckpointEntry {
            name: name.to_string(),
            tensor: t.clone(),
        }));
        write_checkpoint(&entries)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let entries = read_checkpoint(bytes)?;
        let first = entries
            .first()
            .ok_or_else(|| Error::format("NNCK", "missing config record"))?;
        let mut model = match first.name.as_str() {
            "config:vit" => Model::vit(ViTConfig::from_fields(first.tensor.data())?, 0)?,
            "config:cnn" => Model::cnn(CnnConfig::from_fields(first.tensor.data())?, 0)?,
            other => {
                return Err(Error::format("NNCK", format!("unknown config record {other:?}")))
            }
        };
        let store = model.params_mut();
        if entries.len() - 1 != store.len() {
            return Err(Error::format(
                "NNCK",
                format!("expected {} tensors, found {}", store.len(), entries.len() - 1),
            ));
        }
        for e in &entries[1..] {
            let id = store
                .find(&e.name)
                .ok_or_else(|| Error::format("NNCK", format!("unexpected tensor {:?}", e.name)))?;
            let slot = store.get_mut(id);
            if slot.shape() != e.tensor.shape() {
                return Err(Error::format(
                    "NNCK",
                    format!("tensor {:?} has shape {:?}, expected {:?}", e.name, e.tensor.shape(), slot.shape()),
                ));
            }
            *slot = e.tensor.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read(path)?)
    }
}

/// Index and value of the largest entry; the first wins ties.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn loss_of(model: &Model, image: &dyn ImageData, label: usize) -> Result<f64> {
    let tape = Tape::new();
    let vars = model.params().bind_frozen(&tape);
    let p = model.forward(&tape, &vars, image)?;
    let l = crate::nn::cross_entropy(&tape, p, label)?;
    Ok(tape.scalar(l))
}

/// Compares the backpropagated cross-entropy gradient of `samples` randomly
/// chosen scalar parameters against central differences and returns the
/// worst relative error. Parameters are restored afterwards.
pub fn gradient_check(
    model: &mut Model,
    image: &dyn ImageData,
    label: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use crate::nn::gradcheck::{rel_err, H};
    let tape = Tape::new();
    let vars = model.params().bind(&tape);
    let p = model.forward(&tape, &vars, image)?;
    let l = crate::nn::cross_entropy(&tape, p, label)?;
    let g = tape.backward(l)?;
    let mut worst = 0.0f64;
    let mut s = crate::rng::SplitMix64::new(seed);
    for _ in 0..samples {
        let t = (s.next_u64() % model.params().len() as u64) as usize;
        let j = (s.next_u64() % model.params().tensors()[t].len() as u64) as usize;
        let analytic = g.data(vars[t]).expect("every parameter is a tape leaf")[j];
        let orig = model.params().tensors()[t].data()[j];
        model.params_mut().tensors_mut()[t].data_mut()[j] = orig + H;
        let up = loss_of(model, image, label);
        model.params_mut().tensors_mut()[t].data_mut()[j] = orig - H;
        let down = loss_of(model, image, label);
        model.params_mut().tensors_mut()[t].data_mut()[j] = orig;
        let numeric = (up? - down?) / (2.0 * H);
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
