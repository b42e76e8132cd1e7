//! Regression metrics over trait predictions.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::traits::{Trait, TraitVector, NUM_TRAITS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: TraitVector,
    pub mean_mae: f64,
    /// `1 − MAE` per trait.
    pub accuracy: TraitVector,
    pub mean_accuracy: f64,
    /// Mean over clips of the per-clip average squared error across traits.
    pub mse: f64,
}

/// Accuracy as `1 − MAE`.
pub fn accuracy_from_mae(mae: f64) -> f64 {
    1.0 - mae
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Metrics {
    pub fn from_predictions(preds: &[TraitVector], labels: &[TraitVector]) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::EmptyDataset("no predictions to score".into()));
        }
        if preds.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        let n = preds.len() as f64;
        let mut mae = [0.0; NUM_TRAITS];
        let mut mse = 0.0;
        for (p, y) in preds.iter().zip(labels) {
            let mut sq = 0.0;
            for i in 0..NUM_TRAITS {
                mae[i] += (p[i] - y[i]).abs();
                sq += (p[i] - y[i]).powi(2);
            }
            mse += sq / NUM_TRAITS as f64;
        }
        for m in &mut mae {
            *m /= n;
        }
        Ok(Metrics::from_mae(mae, mse / n))
    }

    /// Derives every field from per-trait MAE and an MSE value.
    pub fn from_mae(mae: TraitVector, mse: f64) -> Self {
        let accuracy = mae.map(accuracy_from_mae);
        Metrics {
            mae,
            mean_mae: mean(&mae),
            accuracy,
            mean_accuracy: mean(&accuracy),
            mse,
        }
    }

    pub fn tsv_header() -> String {
        let mut s = String::from("model\tmetric\tmean");
        for t in Trait::ALL {
            write!(s, "\t{t}").expect("string write");
        }
        s
    }

    /// Two rows, MAE then accuracy, each `name metric mean E A C N O`.
    pub fn tsv_rows(&self, name: &str) -> String {
        let mut s = String::new();
        for (label, mean, per) in [("mae", self.mean_mae, &self.mae), ("accuracy", self.mean_accuracy, &self.accuracy)] {
            write!(s, "{name}\t{label}\t{mean:.4}").expect("string write");
            for v in per {
                write!(s, "\t{v:.4}").expect("string write");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = vec![[0.2, 0.4, 0.6, 0.8, 1.0], [0.0; 5]];
        let m = Metrics::from_predictions(&y, &y).unwrap();
        assert_eq!(m.mae, [0.0; 5]);
        assert_eq!(m.accuracy, [1.0; 5]);
        assert_eq!((m.mean_mae, m.mean_accuracy, m.mse), (0.0, 1.0, 0.0));
    }

    #[test]
    fn hand_computed_values() {
        let p = vec![[0.5; 5], [0.5; 5]];
        let y = vec![[0.4, 0.5, 0.5, 0.5, 0.5], [0.8, 0.5, 0.5, 0.5, 0.3]];
        let m = Metrics::from_predictions(&p, &y).unwrap();
        assert!((m.mae[0] - 0.2).abs() < 1e-15);
        assert!((m.mae[4] - 0.1).abs() < 1e-15);
        // clip 1: 0.01/5; clip 2: (0.09 + 0.04)/5
        assert!((m.mse - (0.002 + 0.026) / 2.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(m.accuracy[i], 1.0 - m.mae[i]);
        }
        assert!(Metrics::from_predictions(&[], &[]).is_err());
    }

    #[test]
    fn tsv_layout() {
        let m = Metrics::from_mae([0.1; 5], 0.02);
        assert_eq!(Metrics::tsv_header(), "model\tmetric\tmean\tE\tA\tC\tN\tO");
        let rows = m.tsv_rows("audio");
        assert!(rows.starts_with("audio\tmae\t0.1000\t0.1000"));
        assert!(rows.contains("audio\taccuracy\t0.9000"));
    }
}
