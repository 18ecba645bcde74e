use ndarray::{Array2, ArrayView2, Axis};

use super::{ValueGrad, LOG_PROB_FLOOR};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{ClassWeightVector, Identity};

/// Row-wise `softmax(logits / temperature)` with max subtraction.
pub fn tempered_softmax<S: Scalar>(logits: ArrayView2<S>, temperature: S) -> Result<Array2<S>> {
    if !(temperature > S::zero()) {
        return Err(Error::Invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.rows_mut() {
        let max = row.fold(S::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: S = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Vector-Jacobian product of [`tempered_softmax`]: maps `dL/dp` to `dL/dlogits`.
pub fn tempered_softmax_vjp<S: Scalar>(
    probs: ArrayView2<S>,
    grad_probs: ArrayView2<S>,
    temperature: S,
) -> Array2<S> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p, g), mut o) in probs
        .rows()
        .into_iter()
        .zip(grad_probs.rows())
        .zip(out.rows_mut())
    {
        let dot: S = p.iter().zip(g.iter()).map(|(&a, &b)| a * b).sum();
        for ((o, &pj), &gj) in o.iter_mut().zip(p.iter()).zip(g.iter()) {
            *o = pj * (gj - dot) / temperature;
        }
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax<S: Scalar>(logits: ArrayView2<S>) -> Array2<S> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(S::neg_infinity(), |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `-(1/normalizer) * Σ_i w_i * max(log p(y_i), floor)` with its logits gradient.
///
/// The gradient is zero for rows whose log-probability sits on the floor.
pub fn weighted_cross_entropy<S: Scalar>(
    logits: ArrayView2<S>,
    labels: &[usize],
    sample_weights: &[S],
    normalizer: usize,
) -> Result<ValueGrad<S>> {
    let (b, k) = logits.dim();
    if labels.len() != b {
        return Err(Error::dim("cross-entropy labels", b, labels.len()));
    }
    if sample_weights.len() != b {
        return Err(Error::dim("cross-entropy weights", b, sample_weights.len()));
    }
    if normalizer == 0 {
        return Err(Error::Invalid("cross-entropy normalizer must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let n = S::from_count(normalizer);
    let floor = S::lit(LOG_PROB_FLOOR);
    let logp = log_softmax(logits);
    let mut grad = Array2::zeros((b, k));
    let mut total = S::zero();
    for (i, (&y, &w)) in labels.iter().zip(sample_weights).enumerate() {
        let lp = logp[[i, y]];
        if lp > floor {
            total -= w * lp;
            let scale = w / n;
            for j in 0..k {
                let p = logp[[i, j]].exp();
                grad[[i, j]] = scale * p;
            }
            grad[[i, y]] -= scale;
        } else {
            total -= w * floor;
        }
    }
    Ok(ValueGrad {
        value: total / n,
        grad,
    })
}

/// Label-shift weighted conditional classification loss.
///
/// Each sample is weighted by `alpha[y_i]`; the sum is divided by `normalizer`.
pub fn weighted_cls_loss<S: Scalar>(
    logits: ArrayView2<S>,
    labels: &[Identity],
    alpha: &ClassWeightVector<S>,
    normalizer: usize,
) -> Result<ValueGrad<S>> {
    let k = logits.len_of(Axis(1));
    if alpha.len() != k {
        return Err(Error::dim("class weight vector", k, alpha.len()));
    }
    let ys: Vec<usize> = labels.iter().map(|l| l.0).collect();
    if let Some(&bad) = ys.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let w: Vec<S> = ys.iter().map(|&y| alpha.as_slice()[y]).collect();
    weighted_cross_entropy(logits, &ys, &w, normalizer)
}

/// Mean camera-prediction cross-entropy.
pub fn domain_loss<S: Scalar>(camera_logits: ArrayView2<S>, cameras: &[usize]) -> Result<ValueGrad<S>> {
    let b = camera_logits.nrows();
    if b == 0 {
        return Err(Error::Invalid("domain loss on empty batch".into()));
    }
    weighted_cross_entropy(camera_logits, cameras, &vec![S::one(); b], b)
}
