use std::fmt::Write as _;

use log::info;

use super::metrics::{evaluate, predict_all, Metrics};
use super::split::Split;
use crate::crypt::{encrypt, KeyStream};
use crate::error::Result;
use crate::models::{train, Classifier, CnnConfig, History, LabeledSet, Model, ViTConfig};
use crate::nn::TrainConfig;
use crate::rng::sub_seed;
use crate::signal::{generate_sample, Class, SampleParams};

/// `per_class` plaintext samples per class, class-major, from dataset
/// seed `seed`.
pub fn synth_dataset(per_class: usize, seed: u64) -> Result<LabeledSet> {
    let mut set = LabeledSet::default();
    for class in Class::ALL {
        for i in 0..per_class {
            let img = generate_sample(&SampleParams::derive(seed, class, i))?;
            set.push(img, class);
        }
    }
    Ok(set)
}

/// Encrypts every image under its own fresh key.
pub fn encrypt_set(plain: &LabeledSet, patch: usize, key_seed: u64) -> Result<LabeledSet> {
    let mut keys = KeyStream::new(key_seed);
    let mut out = LabeledSet::default();
    for (img, &label) in plain.images.iter().zip(&plain.labels) {
        let key = keys.fresh_key(patch)?;
        out.push(encrypt(img, &key)?.into_spectrogram(), label);
    }
    Ok(out)
}

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Vit,
    Cnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Vit => "vit",
            Arch::Cnn => "cnn",
        }
    }

    pub fn build(self, patch: usize, seed: u64) -> Result<Model> {
        match self {
            Arch::Vit => Model::vit(ViTConfig::with_patch_size(patch), seed),
            Arch::Cnn => Model::cnn(CnnConfig::default(), seed),
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit" => Ok(Arch::Vit),
            "cnn" => Ok(Arch::Cnn),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown model {other:?} (expected vit or cnn)"
            ))),
        }
    }
}

/// One trained model's line in a results table.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub model: String,
    pub patch_size: usize,
    pub metrics: Metrics,
    pub prediction_time_s: f64,
    pub parameters: usize,
    pub history: History,
}

/// Trains `arch` on the train/val members of `data` and scores it on the
/// test members.
pub fn train_and_evaluate(
    arch: Arch,
    patch: usize,
    data: &LabeledSet,
    split: &Split,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, ExperimentRow)> {
    let mut model = arch.build(patch, seed)?;
    let train_set = data.subset(&split.train);
    let val_set = data.subset(&split.val);
    let test_set = data.subset(&split.test);
    let history = train(&mut model, &train_set, &val_set, cfg)?;
    let metrics = evaluate(&model, &test_set.images, &test_set.labels)?;
    let prediction_time_s = model.mean_latency(&test_set.images[0])?;
    info!(
        "{} p{patch}: test accuracy {:.3}, macro F1 {:.3}, {:.4} s/image",
        arch.name(),
        metrics.accuracy,
        metrics.macro_f1,
        prediction_time_s
    );
    let row = ExperimentRow {
        model: arch.name().into(),
        patch_size: patch,
        metrics,
        prediction_time_s,
        parameters: model.parameter_count(),
        history,
    };
    Ok((model, row))
}

/// Results table with exactly the six headline columns, one row per model
/// in the order given.
pub fn report_table(rows: &[ExperimentRow]) -> String {
    let mut s = String::from(
        "F1 Score,Accuracy,Precision,Recall,Prediction Time (s),Parameters (M)\n",
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:.3},{:.3},{:.3},{:.3},{:.4},{:.3}",
            m.macro_f1,
            m.accuracy,
            m.macro_precision,
            m.macro_recall,
            r.prediction_time_s,
            r.parameters as f64 / 1e6
        );
    }
    s
}

/// Patch-sweep results keyed by model and patch size.
#[derive(Debug, Clone)]
pub struct PatchSweep {
    pub rows: Vec<ExperimentRow>,
}

impl PatchSweep {
    pub const CSV_HEADER: &'static str =
        "model,patch_size,f1,accuracy,precision,recall,prediction_time_s,parameters_m";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.4},{:.3}",
                r.model,
                r.patch_size,
                m.macro_f1,
                m.accuracy,
                m.macro_precision,
                m.macro_recall,
                r.prediction_time_s,
                r.parameters as f64 / 1e6
            );
        }
        s
    }

    pub fn get(&self, model: &str, patch: usize) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.model == model && r.patch_size == patch)
    }
}

/// For each patch size: fresh per-image keys at that size, then a ViT with
/// the matching patch and the unchanged CNN, both trained and scored.
pub fn patch_size_sweep(
    plain: &LabeledSet,
    split: &Split,
    sizes: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PatchSweep> {
    for &p in sizes {
        ViTConfig::with_patch_size(p).validate()?;
    }
    let mut rows = Vec::new();
    for &p in sizes {
        let data = encrypt_set(plain, p, sub_seed(seed, "keys", p as u64))?;
        for arch in [Arch::Vit, Arch::Cnn] {
            let (_, row) = train_and_evaluate(arch, p, &data, split, cfg, seed)?;
            rows.push(row);
        }
    }
    Ok(PatchSweep { rows })
}

/// Accuracy of a model over many independently keyed encryptions of
/// fresh images.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleReport {
    pub per_class_accuracy: [f64; Class::COUNT],
    pub overall_accuracy: f64,
    pub predictions: usize,
    /// Per image: share of its encrypted versions that agree with the
    /// image's most common prediction.
    pub agreement: Vec<f64>,
}

impl ShuffleReport {
    pub fn mean_agreement(&self) -> f64 {
        self.agreement.iter().sum::<f64>() / self.agreement.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,accuracy,mean_agreement\n");
        for c in Class::ALL {
            let _ = writeln!(s, "{},{},", c.name(), self.per_class_accuracy[c.index()]);
        }
        let _ = writeln!(s, "overall,{},{}", self.overall_accuracy, self.mean_agreement());
        s
    }

    /// Per-class accuracy (x = class index) and per-image agreement
    /// (x = image index) series.
    pub fn plot_csv(&self) -> String {
        let mut series: Vec<(&str, f64, f64)> = Class::ALL
            .iter()
            .map(|c| ("class_accuracy", c.index() as f64, self.per_class_accuracy[c.index()]))
            .collect();
        series.extend(self.agreement.iter().enumerate().map(|(i, &a)| ("agreement", i as f64, a)));
        super::plot_csv(&series)
    }
}

/// Generates `per_class` unseen samples per class, encrypts each
/// `versions` times under independent keys and classifies every version.
pub fn shuffle_invariance_test(
    model: &dyn Classifier,
    per_class: usize,
    versions: usize,
    patch: usize,
    seed: u64,
) -> Result<ShuffleReport> {
    let fresh = synth_dataset(per_class, sub_seed(seed, "fresh-samples", 0))?;
    let mut keys = KeyStream::new(sub_seed(seed, "fresh-keys", 0));
    let mut correct = [0usize; Class::COUNT];
    let mut total = [0usize; Class::COUNT];
    let mut agreement = Vec::with_capacity(fresh.len());
    for (img, &label) in fresh.images.iter().zip(&fresh.labels) {
        let mut encrypted = Vec::with_capacity(versions);
        for _ in 0..versions {
            encrypted.push(encrypt(img, &keys.fresh_key(patch)?)?.into_spectrogram());
        }
        let preds = predict_all(model, &encrypted)?;
        let mut votes = [0usize; Class::COUNT];
        for p in &preds {
            votes[p.index()] += 1;
        }
        agreement.push(*votes.iter().max().unwrap_or(&0) as f64 / versions as f64);
        correct[label.index()] += votes[label.index()];
        total[label.index()] += versions;
    }
    let per_class_accuracy =
        std::array::from_fn(|c| if total[c] == 0 { 0.0 } else { correct[c] as f64 / total[c] as f64 });
    let predictions: usize = total.iter().sum();
    Ok(ShuffleReport {
        per_class_accuracy,
        overall_accuracy: correct.iter().sum::<usize>() as f64 / predictions.max(1) as f64,
        predictions,
        agreement,
    })
}
