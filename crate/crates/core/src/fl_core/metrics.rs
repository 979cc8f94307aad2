use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::model::WeightVector;
use super::FlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Support-weighted F1; the headline score.
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    /// Metrics from true labels and predictions over `n_classes` classes.
    /// Undefined precision/recall (zero denominator) counts as 0.
    pub fn from_predictions(labels: &[usize], preds: &[usize], n_classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in labels.iter().zip(preds) {
            confusion[t][p] += 1;
        }
        let total = labels.len();
        let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..n_classes)
            .map(|c| {
                let tp = confusion[c][c];
                let predicted: usize = (0..n_classes).map(|t| confusion[t][c]).sum();
                let support: usize = confusion[c].iter().sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n_classes as f64;
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / total as f64
        };
        MetricsReport {
            accuracy: ratio(correct, total),
            macro_f1,
            weighted_f1,
            per_class,
        }
    }
}

pub fn evaluate(w: &WeightVector, test: &Dataset) -> Result<MetricsReport, FlError> {
    if test.is_empty() {
        return Err(FlError::InvalidDataset("empty test set".into()));
    }
    if w.n_inputs() != test.n_features || w.n_classes() != test.n_classes {
        return Err(FlError::ShapeMismatch("model does not fit test data".into()));
    }
    let preds: Vec<usize> = (0..test.len()).map(|i| w.predict(test.row(i))).collect();
    Ok(MetricsReport::from_predictions(&test.labels, &preds, test.n_classes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_predictor() {
        let labels = vec![0, 1, 2, 3, 3, 2];
        let r = MetricsReport::from_predictions(&labels, &labels, 4);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let preds = vec![2; 400];
        let r = MetricsReport::from_predictions(&labels, &preds, 4);
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.per_class[2].recall, 1.0);
        assert_eq!(r.per_class[0].precision, 0.0);
    }

    #[test]
    fn matches_independent_recount() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(1..300);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let r = MetricsReport::from_predictions(&labels, &preds, 4);
            let mut weighted = 0.0;
            for c in 0..4 {
                let tp = labels.iter().zip(&preds).filter(|(t, p)| **t == c && **p == c).count();
                let fp = labels.iter().zip(&preds).filter(|(t, p)| **t != c && **p == c).count();
                let fn_ = labels.iter().zip(&preds).filter(|(t, p)| **t == c && **p != c).count();
                let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
                assert!((r.per_class[c].precision - p).abs() < 1e-12);
                assert!((r.per_class[c].recall - rc).abs() < 1e-12);
                assert!((r.per_class[c].f1 - f).abs() < 1e-12);
                assert_eq!(r.per_class[c].support, tp + fn_);
                weighted += f * (tp + fn_) as f64;
            }
            assert!((r.weighted_f1 - weighted / n as f64).abs() < 1e-12);
            let supports: usize = r.per_class.iter().map(|m| m.support).sum();
            assert_eq!(supports, n);
            let acc = labels.iter().zip(&preds).filter(|(t, p)| t == p).count() as f64 / n as f64;
            assert!((r.accuracy - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_test_set_rejected() {
        let w = crate::fl_core::init_weights(&[2, 3, 2], 1).unwrap();
        assert!(evaluate(&w, &Dataset::empty(2, 2)).is_err());
    }
}
