use super::*;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::signal::{Class, ImageData, Spectrogram};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

struct Constant(Class);

impl Classifier for Constant {
    fn probabilities(&self, _: &dyn ImageData) -> Result<Vec<f64>> {
        let mut p = vec![0.0; 3];
        p[self.0.index()] = 1.0;
        Ok(p)
    }
}

fn blank(n: usize) -> Vec<Spectrogram> {
    (0..n).map(|_| Spectrogram::new(8, 8, 3, vec![0.0; 192]).unwrap()).collect()
}

fn balanced(per_class: usize) -> Vec<Class> {
    Class::ALL.iter().flat_map(|&c| std::iter::repeat(c).take(per_class)).collect()
}

#[test]
fn hand_built_confusion_matrix() {
    let m = Metrics::from_confusion([[2, 1, 0], [0, 3, 0], [1, 0, 2]]);
    assert!(close(m.accuracy, 7.0 / 9.0));
    let p = [2.0 / 3.0, 3.0 / 4.0, 1.0];
    let r = [2.0 / 3.0, 1.0, 2.0 / 3.0];
    let f = [2.0 / 3.0, 6.0 / 7.0, 4.0 / 5.0];
    for c in 0..3 {
        assert!(close(m.per_class[c].precision, p[c]));
        assert!(close(m.per_class[c].recall, r[c]));
        assert!(close(m.per_class[c].f1, f[c]));
        assert_eq!(m.per_class[c].support, 3);
    }
    assert!(close(m.macro_precision, 29.0 / 36.0));
    assert!(close(m.macro_recall, 7.0 / 9.0));
    assert!(close(m.macro_f1, 244.0 / 315.0));
}

#[test]
fn constant_predictor_scores() {
    let labels = balanced(35);
    let images = blank(labels.len());
    for c in Class::ALL {
        let m = evaluate(&Constant(c), &images, &labels).unwrap();
        let three = |v: f64| format!("{v:.3}");
        assert_eq!(three(m.accuracy), "0.333");
        assert_eq!(three(m.macro_precision), "0.111");
        assert_eq!(three(m.macro_recall), "0.333");
        assert_eq!(three(m.macro_f1), "0.167");
    }
}

#[test]
fn perfect_predictions_score_one() {
    let labels = balanced(4);
    let m = Metrics::from_predictions(&labels, &labels).unwrap();
    for v in [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1] {
        assert_eq!(v, 1.0);
    }
    assert!(evaluate(&Constant(Class::Soi), &[], &[]).is_err());
}

fn fixture() -> (Vec<Vec<f64>>, Vec<Class>) {
    let probs = vec![
        vec![0.9, 0.05, 0.05],
        vec![0.5, 0.3, 0.2],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.1, 0.8],
        vec![0.4, 0.35, 0.25],
        vec![0.05, 0.6, 0.35],
    ];
    let labels = vec![Class::Soi, Class::Soi, Class::Ci, Class::Ci, Class::Cwi, Class::Cwi];
    (probs, labels)
}

#[test]
fn six_row_confidence_fixture() {
    let (probs, labels) = fixture();
    let s = confidence_sweep_from_probs(&probs, &labels, &[0.0, 0.5, 0.85, 0.95]).unwrap();
    let got: Vec<(f64, usize, Option<f64>)> =
        s.points.iter().map(|p| (p.coverage, p.kept, p.accuracy())).collect();
    assert_eq!(
        got,
        vec![
            (1.0, 6, Some(4.0 / 6.0)),
            (4.0 / 6.0, 4, Some(0.75)),
            (1.0 / 6.0, 1, Some(1.0)),
            (0.0, 0, None),
        ]
    );
    let csv = s.to_csv();
    assert!(csv.lines().last().unwrap().ends_with(",0,,"));
}

#[test]
fn zero_threshold_matches_evaluate() {
    let labels = balanced(3);
    let images = blank(labels.len());
    let model = Constant(Class::Cwi);
    let s = confidence_sweep(&model, &images, &labels, &[0.0]).unwrap();
    assert_eq!(s.points[0].coverage, 1.0);
    assert_eq!(
        s.points[0].accuracy(),
        Some(evaluate(&model, &images, &labels).unwrap().accuracy)
    );
}

#[test]
fn bad_thresholds_are_rejected() {
    let (probs, labels) = fixture();
    assert!(confidence_sweep_from_probs(&probs, &labels, &[0.5, 0.2]).is_err());
    assert!(confidence_sweep_from_probs(&probs, &labels, &[1.0]).is_err());
    assert!(confidence_sweep_from_probs(&probs, &labels, &[-0.1]).is_err());
}

#[test]
fn split_sizes_and_determinism() {
    let labels = balanced(700);
    let s = stratified_split(&labels, (0.70, 0.15, 0.15), 3).unwrap();
    for c in Class::ALL {
        let count = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (490, 105, 105));
    }
    assert_eq!(s, stratified_split(&labels, (0.70, 0.15, 0.15), 3).unwrap());
    assert_ne!(s, stratified_split(&labels, (0.70, 0.15, 0.15), 4).unwrap());

    let all = stratified_split(&labels, (1.0, 0.0, 0.0), 3).unwrap();
    assert_eq!(all.train.len(), 2100);
    assert!(all.val.is_empty() && all.test.is_empty());
}

#[test]
fn infeasible_splits_are_errors() {
    let labels = balanced(2);
    assert!(stratified_split(&labels, (0.7, 0.15, 0.15), 0).is_err());
    assert!(stratified_split(&balanced(10), (0.5, 0.6, 0.1), 0).is_err());
}

#[test]
fn report_table_layout() {
    let metrics = Metrics::from_confusion([[2, 1, 0], [0, 3, 0], [1, 0, 2]]);
    let row = |model: &str, params| ExperimentRow {
        model: model.into(),
        patch_size: 16,
        metrics: metrics.clone(),
        prediction_time_s: 0.0123,
        parameters: params,
        history: Default::default(),
    };
    let csv = report_table(&[row("vit", 154_179), row("cnn", 124_803)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "F1 Score,Accuracy,Precision,Recall,Prediction Time (s),Parameters (M)"
    );
    assert_eq!(lines[1], "0.775,0.778,0.806,0.778,0.0123,0.154");
    assert_eq!(lines[2].split(',').last(), Some("0.125"));
    assert_eq!(report_file_name("tableI", 16, 42), "tableI_p16_seed42.csv");
}

#[test]
fn constant_model_agrees_with_itself() {
    let r = shuffle_invariance_test(&Constant(Class::Ci), 2, 3, 16, 9).unwrap();
    assert_eq!(r.predictions, 18);
    assert!(r.agreement.iter().all(|&a| a == 1.0));
    assert_eq!(r.per_class_accuracy, [0.0, 0.0, 1.0]);
    assert!(close(r.overall_accuracy, 1.0 / 3.0));
}

#[test]
fn sweep_rejects_indivisible_patch() {
    let data = crate::models::LabeledSet::default();
    let split = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    let r = patch_size_sweep(&data, &split, &[5], &Default::default(), 0);
    assert!(matches!(r, Err(Error::NotDivisible { .. })));
}
