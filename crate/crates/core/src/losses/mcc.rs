//! Minimum class confusion on unlabeled target batches.
//!
//! Pipeline: tempered softmax, per-sample prediction entropy, entropy-based
//! sample weights normalized to sum to the batch size, weighted class
//! correlation `Pᵀ diag(W) P`, row normalization, then the off-diagonal mass
//! divided by `K`. Every stage has a vector-Jacobian product so the composite
//! gradient is exact, including the path through the sample weights.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::classification::{tempered_softmax, tempered_softmax_vjp};
use super::ValueGrad;
use crate::config::ZeroRowPolicy;
use crate::error::{Error, Result};
use crate::scalar::{signum0, Scalar};

/// `-Σ_j p_j log(p_j + eps)`.
pub fn prediction_entropy<S: Scalar>(p: ArrayView1<S>, eps: S) -> S {
    -p.iter().map(|&pj| pj * (pj + eps).ln()).sum::<S>()
}

/// Gradient of [`prediction_entropy`] with respect to `p`.
pub fn prediction_entropy_grad<S: Scalar>(p: ArrayView1<S>, eps: S) -> Array1<S> {
    p.mapv(|pj| -(pj + eps).ln() - pj / (pj + eps))
}

/// `W_i = B * w_i / Σ_m w_m` with `w_i = 1 + exp(-H_i)`.
pub fn mcc_weights<S: Scalar>(entropies: ArrayView1<S>) -> Result<Array1<S>> {
    let b = entropies.len();
    if b == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let w = entropies.mapv(|h| S::one() + (-h).exp());
    let sum = w.sum();
    let scale = S::from_count(b) / sum;
    Ok(w.mapv(|v| v * scale))
}

/// Vector-Jacobian product of [`mcc_weights`]: maps `dL/dW` to `dL/dH`.
pub fn mcc_weights_vjp<S: Scalar>(entropies: ArrayView1<S>, grad_weights: ArrayView1<S>) -> Array1<S> {
    let b = S::from_count(entropies.len());
    let e = entropies.mapv(|h| (-h).exp());
    let w = e.mapv(|v| S::one() + v);
    let sum = w.sum();
    let gw_dot: S = grad_weights.iter().zip(w.iter()).map(|(&g, &wi)| g * wi).sum::<S>() / sum;
    let mut out = Array1::zeros(entropies.len());
    for m in 0..entropies.len() {
        let d_w = b / sum * (grad_weights[m] - gw_dot);
        out[m] = -d_w * e[m];
    }
    out
}

/// Row-normalized weighted class correlation matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix<S> {
    pub raw: Array2<S>,
    pub normalized: Array2<S>,
    /// Rows whose raw mass was zero and were replaced per the policy.
    pub degenerate_rows: Vec<usize>,
}

impl<S: Scalar> ConfusionMatrix<S> {
    pub fn num_classes(&self) -> usize {
        self.normalized.nrows()
    }
}

fn row_is_degenerate<S: Scalar>(sum: S) -> bool {
    !(sum > S::min_positive_value())
}

/// `C_raw = Pᵀ diag(W) P`, normalized row-wise.
pub fn class_confusion<S: Scalar>(
    probs: ArrayView2<S>,
    weights: ArrayView1<S>,
    zero_rows: ZeroRowPolicy,
) -> Result<ConfusionMatrix<S>> {
    let (b, k) = probs.dim();
    if weights.len() != b {
        return Err(Error::dim("confusion weights", b, weights.len()));
    }
    let mut weighted = probs.to_owned();
    for (mut row, &w) in weighted.rows_mut().into_iter().zip(weights.iter()) {
        row.mapv_inplace(|v| v * w);
    }
    let raw = weighted.t().dot(&probs);
    let mut normalized = raw.clone();
    let mut degenerate_rows = Vec::new();
    for (j, mut row) in normalized.rows_mut().into_iter().enumerate() {
        let sum = row.sum();
        if row_is_degenerate(sum) {
            degenerate_rows.push(j);
            let fill = match zero_rows {
                ZeroRowPolicy::Uniform => S::one() / S::from_count(k),
                ZeroRowPolicy::Skip => S::zero(),
            };
            row.fill(fill);
        } else {
            row.mapv_inplace(|v| v / sum);
        }
    }
    Ok(ConfusionMatrix {
        raw,
        normalized,
        degenerate_rows,
    })
}

/// Vector-Jacobian product of [`class_confusion`] with respect to `(P, W)`.
pub fn class_confusion_vjp<S: Scalar>(
    probs: ArrayView2<S>,
    weights: ArrayView1<S>,
    confusion: &ConfusionMatrix<S>,
    grad_normalized: ArrayView2<S>,
) -> (Array2<S>, Array1<S>) {
    let k = confusion.num_classes();
    // through the row normalization
    let mut grad_raw = Array2::zeros((k, k));
    for j in 0..k {
        if confusion.degenerate_rows.contains(&j) {
            continue;
        }
        let s: S = confusion.raw.row(j).sum();
        let dot: S = grad_normalized
            .row(j)
            .iter()
            .zip(confusion.normalized.row(j))
            .map(|(&g, &c)| g * c)
            .sum();
        for m in 0..k {
            grad_raw[[j, m]] = (grad_normalized[[j, m]] - dot) / s;
        }
    }
    // through C_raw = Pᵀ diag(W) P
    let sym = &grad_raw + &grad_raw.t();
    let p_sym = probs.dot(&sym);
    let mut grad_p = p_sym;
    for (mut row, &w) in grad_p.rows_mut().into_iter().zip(weights.iter()) {
        row.mapv_inplace(|v| v * w);
    }
    let p_g = probs.dot(&grad_raw);
    let grad_w = Array1::from_iter(
        p_g.rows()
            .into_iter()
            .zip(probs.rows())
            .map(|(a, p)| a.iter().zip(p.iter()).map(|(&x, &y)| x * y).sum::<S>()),
    );
    (grad_p, grad_w)
}

/// `(Σ_jk |C_jk| - Tr C) / K`.
pub fn mcc_loss<S: Scalar>(c: ArrayView2<S>) -> S {
    let k = c.nrows();
    let abs_sum: S = c.iter().map(|v| v.abs()).sum();
    let trace: S = (0..k).map(|j| c[[j, j]]).sum();
    (abs_sum - trace) / S::from_count(k)
}

pub fn mcc_loss_grad<S: Scalar>(c: ArrayView2<S>) -> Array2<S> {
    let k = S::from_count(c.nrows());
    let mut g = c.mapv(|v| signum0(v) / k);
    for j in 0..c.nrows() {
        g[[j, j]] -= S::one() / k;
    }
    g
}

/// Full confusion objective on a batch of target logits, with its logits gradient.
pub fn mcc_objective<S: Scalar>(
    logits: ArrayView2<S>,
    temperature: S,
    eps: S,
    zero_rows: ZeroRowPolicy,
) -> Result<ValueGrad<S>> {
    if logits.nrows() == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let probs = tempered_softmax(logits, temperature)?;
    let entropies = Array1::from_iter(probs.rows().into_iter().map(|p| prediction_entropy(p, eps)));
    let weights = mcc_weights(entropies.view())?;
    let confusion = class_confusion(probs.view(), weights.view(), zero_rows)?;
    let value = mcc_loss(confusion.normalized.view());

    let g_c = mcc_loss_grad(confusion.normalized.view());
    let (mut g_p, g_w) = class_confusion_vjp(probs.view(), weights.view(), &confusion, g_c.view());
    let g_h = mcc_weights_vjp(entropies.view(), g_w.view());
    for ((mut gp_row, p_row), &gh) in g_p.rows_mut().into_iter().zip(probs.rows()).zip(g_h.iter()) {
        let dh = prediction_entropy_grad(p_row, eps);
        gp_row.zip_mut_with(&dh, |g, &d| *g += gh * d);
    }
    let grad = tempered_softmax_vjp(probs.view(), g_p.view(), temperature);
    Ok(ValueGrad { value, grad })
}
