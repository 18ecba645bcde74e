//! Terms of the training objective as pure functions with analytic gradients.
//!
//! ```text
//! total = (cls + λ_mcc·mcc) + λ_dis·(vae + dom) + λ_align·align
//! ```

mod bbse;
mod centroid;
mod classification;
mod mcc;
mod vae;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use bbse::{bbse_alpha, confusion_from_predictions, prediction_histogram, BbseEstimate, BbseOptions};
pub use centroid::{alignment_loss, update_centroids, AlignLoss, CentroidBank, ClassUpdate};
pub use classification::{
    domain_loss, log_softmax, tempered_softmax, tempered_softmax_vjp, weighted_cls_loss,
    weighted_cross_entropy,
};
pub use mcc::{
    class_confusion, class_confusion_vjp, mcc_loss, mcc_loss_grad, mcc_objective, mcc_weights,
    mcc_weights_vjp, prediction_entropy, prediction_entropy_grad, ConfusionMatrix,
};
pub use vae::{gaussian_kl, vae_loss, VaeLoss};

use crate::scalar::Scalar;

/// Log-probabilities are clamped here in every cross-entropy.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// A scalar loss and its gradient with respect to the primary input.
#[derive(Clone, Debug)]
pub struct ValueGrad<S> {
    pub value: S,
    pub grad: Array2<S>,
}

/// The three grouped components of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts<S> {
    pub identity: S,
    pub disentangle: S,
    pub align: S,
}

/// Individual term values, as logged under `loss/<name>`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms<S> {
    pub cls: S,
    pub mcc: S,
    pub vae: S,
    pub dom: S,
    pub align: S,
}

impl<S: Scalar> LossTerms<S> {
    pub fn grouped(&self, lambda_mcc: S) -> ObjectiveParts<S> {
        ObjectiveParts {
            identity: self.cls + lambda_mcc * self.mcc,
            disentangle: self.vae + self.dom,
            align: self.align,
        }
    }

    pub fn all_finite(&self) -> bool {
        [self.cls, self.mcc, self.vae, self.dom, self.align]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `identity + λ_dis·disentangle + λ_align·align`.
pub fn total_loss<S: Scalar>(parts: &ObjectiveParts<S>, lambda_dis: S, lambda_align: S) -> S {
    parts.identity + lambda_dis * parts.disentangle + lambda_align * parts.align
}

/// `∂total/∂(identity, disentangle, align)`.
pub fn total_loss_grad<S: Scalar>(lambda_dis: S, lambda_align: S) -> ObjectiveParts<S> {
    ObjectiveParts {
        identity: S::one(),
        disentangle: lambda_dis,
        align: lambda_align,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_examples() {
        let p = ObjectiveParts {
            identity: 1.7,
            disentangle: 3.0,
            align: 9.0,
        };
        assert_eq!(total_loss(&p, 0.0, 0.0), 1.7);
        let ones = ObjectiveParts {
            identity: 1.0,
            disentangle: 1.0,
            align: 1.0,
        };
        assert!((total_loss::<f64>(&ones, 1.0, 0.1) - 2.1).abs() < 1e-15);
        let g = total_loss_grad(0.5, 0.25);
        assert_eq!((g.identity, g.disentangle, g.align), (1.0, 0.5, 0.25));
    }
}
