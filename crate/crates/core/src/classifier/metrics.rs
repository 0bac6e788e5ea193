use serde::{Deserialize, Serialize};

/// Binary classification report; the positive class is `fake = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1_macro: f64,
    pub accuracy: f64,
    /// `[negative (true news), positive (fake news)]`
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    /// `[[tn, fp], [fn, tp]]`
    pub confusion: [[u64; 2]; 2],
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Self {
        let [[tn, fp], [fn_, tp]] = confusion;
        let precision = [ratio(tn, tn + fn_), ratio(tp, tp + fp)];
        let recall = [ratio(tn, tn + fp), ratio(tp, tp + fn_)];
        let f1 = [ratio(2 * tn, 2 * tn + fn_ + fp), ratio(2 * tp, 2 * tp + fp + fn_)];
        Self {
            f1_macro: (f1[0] + f1[1]) / 2.0,
            accuracy: ratio(tn + tp, tn + fp + fn_ + tp),
            precision,
            recall,
            f1,
            confusion,
        }
    }

    /// Labels and predictions are 0 (true news) or 1 (fake news).
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predicted.len(), labels.len(), "prediction/label length mismatch");
        let mut confusion = [[0u64; 2]; 2];
        for (&p, &y) in predicted.iter().zip(labels) {
            confusion[usize::from(y != 0)][usize::from(p != 0)] += 1;
        }
        Self::from_confusion(confusion)
    }
}

/// Mean that is exact on identical inputs and independent of input order:
/// values are sorted, then averaged as offsets from the smallest one.
pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base = sorted[0];
    base + sorted.iter().map(|v| v - base).sum::<f64>() / sorted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_predictions(&[0, 1, 1, 0], &[0, 1, 1, 0]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1_macro, 1.0);
        assert_eq!(r.confusion, [[2, 0], [0, 2]]);
    }

    #[test]
    fn all_positive_on_balanced_labels() {
        let labels = [0, 1, 0, 1, 0, 1];
        let r = EvalReport::from_predictions(&[1; 6], &labels);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.f1[1], 2.0 / 3.0);
        assert_eq!(r.f1[0], 0.0);
        assert!((r.f1_macro - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stable_mean_is_exact_on_repeats() {
        for v in [0.1, 0.7, 1.0 / 3.0, 0.123_456_789] {
            assert_eq!(stable_mean(&[v, v, v]), v);
        }
        assert_eq!(stable_mean(&[1.0, 2.0, 3.0]), 2.0);
    }
}
