//! Accuracy and seed aggregation.

use serde::{Deserialize, Serialize};

use crate::numkit::Tensor;

/// Percentage of `idx` whose row argmax equals the label. Empty `idx` gives 0.
pub fn accuracy(logits: &Tensor, labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let pred = logits.argmax_rows();
    let hits = idx.iter().filter(|&&i| pred[i] == labels[i]).count();
    100.0 * hits as f64 / idx.len() as f64
}

/// Mean and population standard deviation, folded in input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_hits() {
        let t = Tensor::new(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(accuracy(&t, &[0, 0, 0], &[0, 1, 2]), 200.0 / 3.0);
        assert_eq!(accuracy(&t, &[0, 0, 0], &[]), 0.0);
    }

    #[test]
    fn single_value_has_zero_std() {
        assert_eq!(MeanStd::of(&[81.0]), MeanStd { mean: 81.0, std: 0.0 });
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}
