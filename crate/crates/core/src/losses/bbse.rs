//! Black-box shift estimation of target class priors.
//!
//! With a source confusion estimate `C[ŷ, y] = p_S(ŷ | y)` and the histogram
//! `μ` of hard predictions on the target camera, the target prior solves
//! `C q = μ`. The importance weight for class `k` under a source camera is
//! `q_k / p_S(y = k)`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::config::BbseConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::ClassWeightVector;

#[derive(Clone, Debug)]
pub struct BbseEstimate<S> {
    pub alpha: ClassWeightVector<S>,
    /// Estimated target prior; `None` when the solve fell back.
    pub target_prior: Option<Vec<S>>,
    pub condition: f64,
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct BbseOptions {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub max_condition: f64,
}

impl Default for BbseOptions {
    fn default() -> Self {
        (&BbseConfig::default()).into()
    }
}

impl From<&BbseConfig> for BbseOptions {
    fn from(c: &BbseConfig) -> Self {
        BbseOptions {
            alpha_min: c.alpha_min,
            alpha_max: c.alpha_max,
            max_condition: c.max_condition,
        }
    }
}

/// Column-stochastic confusion `C[ŷ, y]` from hard predictions on labeled data.
///
/// A class with no labeled samples gets the unit column `e_y`.
pub fn confusion_from_predictions<S: Scalar>(predicted: &[usize], truth: &[usize], k: usize) -> Array2<S> {
    let mut counts = Array2::<S>::zeros((k, k));
    let mut per_class = vec![0usize; k];
    for (&p, &y) in predicted.iter().zip(truth) {
        counts[[p, y]] += S::one();
        per_class[y] += 1;
    }
    for (y, &n) in per_class.iter().enumerate() {
        if n == 0 {
            counts[[y, y]] = S::one();
        } else {
            let n = S::from_count(n);
            counts.column_mut(y).mapv_inplace(|v| v / n);
        }
    }
    counts
}

/// Normalized histogram of hard predictions.
pub fn prediction_histogram<S: Scalar>(predicted: &[usize], k: usize) -> Array1<S> {
    let mut h = Array1::<S>::zeros(k);
    for &p in predicted {
        h[p] += S::one();
    }
    if !predicted.is_empty() {
        let n = S::from_count(predicted.len());
        h.mapv_inplace(|v| v / n);
    }
    h
}

/// Solves for the target prior and returns clipped per-class weights.
///
/// Ill-conditioned or singular confusion estimates fall back to all-ones
/// weights; callers see `fallback` and decide whether to warn.
pub fn bbse_alpha<S: Scalar>(
    confusion: ArrayView2<S>,
    target_pred_dist: ArrayView1<S>,
    source_prior: ArrayView1<S>,
    opts: &BbseOptions,
) -> Result<BbseEstimate<S>> {
    let k = source_prior.len();
    if confusion.dim() != (k, k) {
        return Err(Error::dim("bbse confusion", k, confusion.nrows()));
    }
    if target_pred_dist.len() != k {
        return Err(Error::dim("bbse target distribution", k, target_pred_dist.len()));
    }
    if source_prior.iter().any(|&p| !(p > S::zero())) {
        return Err(Error::Invalid("source prior must be strictly positive".into()));
    }
    let fallback = |condition: f64, why: &str| {
        log::debug!("bbse fallback to uniform weights: {why} (condition {condition:.3e})");
        BbseEstimate {
            alpha: ClassWeightVector::ones(k),
            target_prior: None,
            condition,
            fallback: true,
        }
    };

    let c = DMatrix::from_fn(k, k, |i, j| confusion[[i, j]].as_f64());
    let mu = DVector::from_fn(k, |i, _| target_pred_dist[i].as_f64());
    if c.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
        return Ok(fallback(f64::INFINITY, "non-finite input"));
    }
    let svd = c.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(condition <= opts.max_condition) {
        return Ok(fallback(condition, "ill-conditioned confusion matrix"));
    }
    let q = match svd.solve(&mu, 0.0) {
        Ok(q) => q,
        Err(e) => return Ok(fallback(condition, e)),
    };
    let mut q: Vec<f64> = q.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Ok(fallback(condition, "estimated prior has no mass"));
    }
    q.iter_mut().for_each(|v| *v /= total);
    let alpha = q
        .iter()
        .zip(source_prior.iter())
        .map(|(&qk, &pk)| S::lit((qk / pk.as_f64()).clamp(opts.alpha_min, opts.alpha_max)))
        .collect();
    Ok(BbseEstimate {
        alpha: ClassWeightVector::new(alpha)?,
        target_prior: Some(q.into_iter().map(S::lit).collect()),
        condition,
        fallback: false,
    })
}
