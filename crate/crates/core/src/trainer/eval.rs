use serde::{Deserialize, Serialize};

use super::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::DisentangleNet;
use crate::scalar::Scalar;

/// Identification results on one target camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes without evaluation samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Row-normalized over true classes; all-zero rows for absent classes.
    pub confusion: Vec<Vec<f64>>,
    pub class_counts: Vec<usize>,
    pub num_samples: usize,
}

impl EvalReport {
    /// Mean of the per-class accuracies over classes present.
    pub fn macro_accuracy(&self) -> f64 {
        let present: Vec<f64> = self.per_class_accuracy.iter().flatten().copied().collect();
        present.iter().sum::<f64>() / present.len().max(1) as f64
    }
}

/// Scores hard predictions against labels over `k` classes.
pub fn evaluate_predictions(predicted: &[usize], truth: &[usize], k: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::dim("predictions", truth.len(), predicted.len()));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &y) in predicted.iter().zip(truth) {
        if p >= k || y >= k {
            return Err(Error::Invalid(format!("class index out of range for {k} classes")));
        }
        counts[y][p] += 1;
    }
    let class_counts: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let correct: usize = (0..k).map(|c| counts[c][c]).sum();
    let confusion = counts
        .iter()
        .zip(&class_counts)
        .map(|(row, &n)| {
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    let per_class_accuracy = (0..k)
        .map(|c| (class_counts[c] > 0).then(|| confusion[c][c]))
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / truth.len() as f64,
        per_class_accuracy,
        confusion,
        class_counts,
        num_samples: truth.len(),
    })
}

/// Eval-mode predictions (`z = mu`) on a labeled set.
pub fn evaluate<S: Scalar>(net: &DisentangleNet<S>, set: &LabeledSet<S>) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let inf = net.infer(set.features.view(), &set.cameras)?;
    evaluate_predictions(&inf.predictions(), &set.label_indices(), net.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predictor_on_balanced_set() {
        let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let r = evaluate_predictions(&vec![0; 40], &truth, 4).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.confusion[2], vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relabeling_symmetry_and_macro_accuracy() {
        let truth = [0, 1, 2, 2, 1, 0, 0];
        let pred = [0, 2, 2, 1, 1, 0, 1];
        let perm = [2, 0, 1];
        let a = evaluate_predictions(&pred, &truth, 3).unwrap();
        let tp: Vec<usize> = truth.iter().map(|&y| perm[y]).collect();
        let pp: Vec<usize> = pred.iter().map(|&y| perm[y]).collect();
        let b = evaluate_predictions(&pp, &tp, 3).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        let diag: f64 = (0..3).map(|c| a.confusion[c][c]).sum();
        assert!((diag / 3.0 - a.macro_accuracy()).abs() < 1e-15);
        for row in &a.confusion {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(evaluate_predictions(&[], &[], 3).is_err());
    }
}
