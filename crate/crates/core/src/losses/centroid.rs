use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::ClassWeightVector;

/// Per-class EMA centroids of identity-subspace features for one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidBank<S> {
    pub tag: String,
    pub dim: usize,
    centroids: Vec<Option<Array1<S>>>,
}

/// How one class centroid moved in an update.
///
/// `batch_weight` is `∂μ_k/∂z_i` for every batch row of class `k`: `1/n_k`
/// on first observation, `(1 - γ)/n_k` afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassUpdate<S> {
    pub class: usize,
    pub rows: Vec<usize>,
    pub batch_weight: S,
}

impl<S: Scalar> CentroidBank<S> {
    pub fn new(tag: impl Into<String>, num_classes: usize, dim: usize) -> Self {
        CentroidBank {
            tag: tag.into(),
            dim,
            centroids: vec![None; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroid(&self, class: usize) -> Option<&Array1<S>> {
        self.centroids.get(class).and_then(|c| c.as_ref())
    }

    pub fn initialized(&self) -> impl Iterator<Item = usize> + '_ {
        self.centroids
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.as_ref().map(|_| k))
    }

    /// EMA update from a batch; classes absent from the batch are untouched.
    pub fn update(&mut self, features: ArrayView2<S>, labels: &[usize], gamma: S) -> Result<Vec<ClassUpdate<S>>> {
        if features.ncols() != self.dim {
            return Err(Error::dim("centroid features", self.dim, features.ncols()));
        }
        if labels.len() != features.nrows() {
            return Err(Error::dim("centroid labels", features.nrows(), labels.len()));
        }
        if !(gamma >= S::zero() && gamma <= S::one()) {
            return Err(Error::Invalid(format!("gamma not in [0,1], got {gamma}")));
        }
        let k = self.num_classes();
        let mut rows_by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Invalid(format!("label {y} out of range for {k} classes")));
            }
            rows_by_class[y].push(i);
        }
        let mut updates = Vec::new();
        for (class, rows) in rows_by_class.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let n = S::from_count(rows.len());
            let mut mean = Array1::<S>::zeros(self.dim);
            for &i in &rows {
                mean += &features.row(i);
            }
            mean.mapv_inplace(|v| v / n);
            let batch_weight = match &mut self.centroids[class] {
                Some(mu) => {
                    mu.zip_mut_with(&mean, |m, &b| *m = gamma * *m + (S::one() - gamma) * b);
                    (S::one() - gamma) / n
                }
                slot @ None => {
                    *slot = Some(mean);
                    S::one() / n
                }
            };
            updates.push(ClassUpdate {
                class,
                rows,
                batch_weight,
            });
        }
        Ok(updates)
    }
}

/// Functional form of [`CentroidBank::update`].
pub fn update_centroids<S: Scalar>(
    bank: &CentroidBank<S>,
    features: ArrayView2<S>,
    labels: &[usize],
    gamma: S,
) -> Result<CentroidBank<S>> {
    let mut next = bank.clone();
    next.update(features, labels, gamma)?;
    Ok(next)
}

/// Alignment value and its gradients with respect to each bank's centroids.
#[derive(Clone, Debug)]
pub struct AlignLoss<S> {
    pub value: S,
    /// `(class, ∂L/∂μ_source,k)`; the target gradient is its negation.
    pub grad_source: Vec<(usize, Array1<S>)>,
    pub common_classes: usize,
}

/// `Σ_k α_k ‖μ_source,k - μ_target,k‖²` over classes initialized in both banks.
pub fn alignment_loss<S: Scalar>(
    source: &CentroidBank<S>,
    target: &CentroidBank<S>,
    alpha: &ClassWeightVector<S>,
) -> Result<AlignLoss<S>> {
    if source.dim != target.dim {
        return Err(Error::dim("centroid dim", source.dim, target.dim));
    }
    if alpha.len() != source.num_classes() || target.num_classes() != source.num_classes() {
        return Err(Error::dim("alignment classes", source.num_classes(), alpha.len()));
    }
    let mut value = S::zero();
    let mut grad_source = Vec::new();
    for k in 0..source.num_classes() {
        let (Some(ms), Some(mt)) = (source.centroid(k), target.centroid(k)) else {
            continue;
        };
        let a = alpha.as_slice()[k];
        let diff = ms - mt;
        value += a * diff.iter().map(|&d| d * d).sum::<S>();
        let two_a = S::lit(2.0) * a;
        grad_source.push((k, diff.mapv(|d| two_a * d)));
    }
    if grad_source.is_empty() {
        log::warn!(
            "no class initialized in both {:?} and {:?}; alignment loss is 0",
            source.tag,
            target.tag
        );
    }
    Ok(AlignLoss {
        value,
        common_classes: grad_source.len(),
        grad_source,
    })
}
