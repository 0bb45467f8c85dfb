use std::fmt::Write as _;

use super::metrics::Metrics;
use crate::error::{Error, Result};
use crate::models::{argmax, Classifier};
use crate::signal::{Class, Spectrogram};

/// One threshold of a confidence sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePoint {
    pub threshold: f64,
    /// Fraction of samples whose top probability is strictly above the
    /// threshold.
    pub coverage: f64,
    pub kept: usize,
    /// Absent when nothing passes the threshold.
    pub metrics: Option<Metrics>,
}

impl ConfidencePoint {
    pub fn accuracy(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSweep {
    pub points: Vec<ConfidencePoint>,
}

impl ConfidenceSweep {
    pub const CSV_HEADER: &'static str = "threshold,coverage,kept,accuracy,macro_f1";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            let (acc, f1) = match &p.metrics {
                Some(m) => (m.accuracy.to_string(), m.macro_f1.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{},{},{},{acc},{f1}", p.threshold, p.coverage, p.kept);
        }
        s
    }

    /// x/y series for accuracy and coverage against threshold.
    pub fn plot_csv(&self) -> String {
        let mut series = Vec::new();
        for p in &self.points {
            if let Some(a) = p.accuracy() {
                series.push(("accuracy", p.threshold, a));
            }
        }
        for p in &self.points {
            series.push(("coverage", p.threshold, p.coverage));
        }
        super::plot_csv(&series)
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
        return Err(Error::InvalidArgument("thresholds must lie in [0, 1)".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("thresholds must be strictly ascending".into()));
    }
    Ok(())
}

/// Sweep over precomputed probability rows.
pub fn confidence_sweep_from_probs(
    probs: &[Vec<f64>],
    labels: &[Class],
    thresholds: &[f64],
) -> Result<ConfidenceSweep> {
    check_thresholds(thresholds)?;
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let top: Vec<(usize, f64)> = probs.iter().map(|p| argmax(p)).collect();
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut kept_labels = Vec::new();
        let mut kept_preds = Vec::new();
        for (&(i, p), &label) in top.iter().zip(labels) {
            if p > t {
                kept_labels.push(label);
                kept_preds.push(
                    Class::from_index(i)
                        .ok_or_else(|| Error::Shape("probability row is not 3-class".into()))?,
                );
            }
        }
        let kept = kept_labels.len();
        let metrics = if kept == 0 {
            None
        } else {
            Some(Metrics::from_predictions(&kept_labels, &kept_preds)?)
        };
        points.push(ConfidencePoint {
            threshold: t,
            coverage: kept as f64 / probs.len() as f64,
            kept,
            metrics,
        });
    }
    Ok(ConfidenceSweep { points })
}

/// Restricts predictions to confident samples at each threshold.
pub fn confidence_sweep(
    model: &dyn Classifier,
    images: &[Spectrogram],
    labels: &[Class],
    thresholds: &[f64],
) -> Result<ConfidenceSweep> {
    check_thresholds(thresholds)?;
    let probs = images
        .iter()
        .map(|img| model.probabilities(img))
        .collect::<Result<Vec<_>>>()?;
    confidence_sweep_from_probs(&probs, labels, thresholds)
}
