use crate::error::{Error, Result};
use crate::models::{classify, Classifier};
use crate::signal::{Class, Spectrogram};

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification scores from a 3×3 confusion matrix indexed
/// `[true][predicted]`. Undefined ratios (0/0) are taken as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassScores; Class::COUNT],
    pub confusion: [[usize; Class::COUNT]; Class::COUNT],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(crate) fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    pub fn from_confusion(confusion: [[usize; Class::COUNT]; Class::COUNT]) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..Class::COUNT).map(|i| confusion[i][i]).sum();
        let per_class = std::array::from_fn(|c| {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(confusion[c][c], predicted);
            let recall = ratio(confusion[c][c], support);
            ClassScores {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            }
        });
        let mean = |f: fn(&ClassScores) -> f64| {
            per_class.iter().map(f).sum::<f64>() / Class::COUNT as f64
        };
        Self {
            accuracy: ratio(trace, total),
            macro_precision: mean(|s| s.precision),
            macro_recall: mean(|s| s.recall),
            macro_f1: mean(|s| s.f1),
            per_class,
            confusion,
        }
    }

    pub fn from_predictions(labels: &[Class], predicted: &[Class]) -> Result<Self> {
        if labels.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels but {} predictions",
                labels.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0usize; Class::COUNT]; Class::COUNT];
        for (t, p) in labels.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Argmax predictions of `model` over `images`.
pub fn predict_all(model: &dyn Classifier, images: &[Spectrogram]) -> Result<Vec<Class>> {
    images.iter().map(|img| classify(model, img).map(|(c, _)| c)).collect()
}

pub fn evaluate(model: &dyn Classifier, images: &[Spectrogram], labels: &[Class]) -> Result<Metrics> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    Metrics::from_predictions(labels, &predict_all(model, images)?)
}
