use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, Model};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Adam, LrSchedule, Tape, Tensor, TrainConfig, PROB_FLOOR};
use crate::rng::sub_seed;
use crate::signal::{Class, Spectrogram};

/// Images with their labels, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub images: Vec<Spectrogram>,
    pub labels: Vec<Class>,
}

impl LabeledSet {
    pub fn new(images: Vec<Spectrogram>, labels: Vec<Class>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Spectrogram, label: Class) {
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_accuracy,lr";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.lr
            );
        }
        s
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Mean floored negative log-likelihood and accuracy over `set`.
pub(crate) fn loss_and_accuracy(model: &Model, set: &LabeledSet) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (img, &label) in set.images.iter().zip(&set.labels) {
        let p = model.probabilities(img)?;
        loss -= p[label.index()].max(PROB_FLOOR).ln();
        if argmax(&p).0 == label.index() {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam training with plateau decay and early stopping on the
/// validation loss. The best-validation weights are restored on return.
pub fn train(
    model: &mut Model,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    let mut adam = Adam::new(model.params().tensors());
    let mut schedule = LrSchedule::new(cfg);
    let mut history = History::default();
    let mut best: Option<Vec<Tensor>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.rng_seed, "batching", epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> =
                model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            for &i in batch {
                let tape = Tape::new();
                let vars = model.params().bind(&tape);
                let probs = model.forward(&tape, &vars, &train_set.images[i])?;
                let label = train_set.labels[i].index();
                if argmax(tape.value(probs).data()).0 == label {
                    correct += 1;
                }
                let loss = cross_entropy(&tape, probs, label)?;
                loss_sum += tape.scalar(loss);
                let g = tape.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&vars) {
                    let gv = g.data(v).expect("every parameter is a tape leaf");
                    for (a, &x) in acc.iter_mut().zip(gv) {
                        *a += x;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for acc in &mut grads {
                acc.iter_mut().for_each(|a| *a *= scale);
            }
            adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = loss_and_accuracy(model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("validation loss"));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
            lr,
        };
        debug!(
            "{} epoch {epoch}: train_loss {:.4} train_acc {:.3} val_loss {:.4} val_acc {:.3} lr {lr:e}",
            model.arch(),
            record.train_loss,
            record.train_accuracy,
            val_loss,
            val_accuracy
        );
        history.epochs.push(record);
        let decision = schedule.observe(val_loss);
        if decision.is_best {
            best = Some(model.params().tensors().to_vec());
            history.best_epoch = epoch;
        }
        if decision.stop {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    if let Some(best) = best {
        model.params_mut().tensors_mut().clone_from_slice(&best);
    }
    info!(
        "{} trained {} epochs, restored epoch {}",
        model.arch(),
        history.epochs.len(),
        history.best_epoch
    );
    Ok(history)
}
