use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::{signum0, Scalar};

/// Capacity-constrained variational loss on a batch, with gradients.
#[derive(Clone, Debug)]
pub struct VaeLoss<S> {
    pub value: S,
    /// Mean squared reconstruction error per sample.
    pub recon: S,
    /// Mean KL divergence to the standard normal prior, before the capacity shift.
    pub kl: S,
    pub grad_target: Array2<S>,
    pub grad_recon: Array2<S>,
    pub grad_mu: Array2<S>,
    pub grad_logvar: Array2<S>,
}

/// Per-sample `0.5 * Σ (mu² + exp(logvar) - 1 - logvar)`.
pub fn gaussian_kl<S: Scalar>(mu: &[S], logvar: &[S]) -> S {
    kl_row(ArrayView1::from(mu), ArrayView1::from(logvar))
}

fn kl_row<S: Scalar>(mu: ArrayView1<S>, logvar: ArrayView1<S>) -> S {
    let half = S::lit(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - S::one() - lv))
        .sum()
}

/// `mean ‖f - f_hat‖² + beta * |mean KL - capacity|`.
///
/// Rows are samples. With a single row this is exactly the per-sample form.
pub fn vae_loss<S: Scalar>(
    target: ArrayView2<S>,
    recon: ArrayView2<S>,
    mu: ArrayView2<S>,
    logvar: ArrayView2<S>,
    beta: S,
    capacity: S,
) -> Result<VaeLoss<S>> {
    if target.dim() != recon.dim() {
        return Err(Error::dim("vae reconstruction", target.ncols(), recon.ncols()));
    }
    if mu.dim() != logvar.dim() {
        return Err(Error::dim("vae posterior", mu.ncols(), logvar.ncols()));
    }
    if target.nrows() != mu.nrows() || target.nrows() == 0 {
        return Err(Error::dim("vae batch", target.nrows(), mu.nrows()));
    }
    if beta < S::zero() || capacity < S::zero() {
        return Err(Error::Invalid("beta and capacity must be nonnegative".into()));
    }
    let all_finite = [target, recon, mu, logvar]
        .iter()
        .all(|a| a.iter().all(|v| v.is_finite()));
    if !all_finite {
        return Err(Error::NonFinite("vae loss input".into()));
    }
    let b = S::from_count(target.nrows());
    let diff = &recon - &target;
    let recon_err = diff.iter().map(|&d| d * d).sum::<S>() / b;
    let kl = mu
        .rows()
        .into_iter()
        .zip(logvar.rows())
        .map(|(m, lv)| kl_row(m, lv))
        .sum::<S>()
        / b;
    let gap = kl - capacity;
    let value = recon_err + beta * gap.abs();

    let two_over_b = S::lit(2.0) / b;
    let grad_recon = diff.mapv(|d| d * two_over_b);
    let grad_target = grad_recon.mapv(|g| -g);
    let s = beta * signum0(gap) / b;
    let grad_mu = mu.mapv(|m| s * m);
    let half = S::lit(0.5);
    let grad_logvar = logvar.mapv(|lv| s * half * (lv.exp() - S::one()));
    Ok(VaeLoss {
        value,
        recon: recon_err,
        kl,
        grad_target,
        grad_recon,
        grad_mu,
        grad_logvar,
    })
}
