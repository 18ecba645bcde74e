use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::losses::log_softmax;

#[derive(Clone, Copy, Debug)]
pub struct ProbeOptions {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            iterations: 500,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Held-out accuracy of a multinomial logistic regression probe.
///
/// Features are standardized with training statistics; the probe is fit by
/// full-batch gradient descent from zero, so the result is deterministic.
pub fn linear_probe_accuracy(
    train_x: ArrayView2<f64>,
    train_y: &[usize],
    test_x: ArrayView2<f64>,
    test_y: &[usize],
    num_classes: usize,
    opts: ProbeOptions,
) -> Result<f64> {
    let (n, d) = train_x.dim();
    if n == 0 || test_y.is_empty() {
        return Err(Error::Invalid("probe needs nonempty train and test sets".into()));
    }
    if train_y.len() != n || test_x.nrows() != test_y.len() || test_x.ncols() != d {
        return Err(Error::dim("probe data", n, train_y.len()));
    }
    if train_y.iter().chain(test_y).any(|&y| y >= num_classes) {
        return Err(Error::Invalid("probe label out of range".into()));
    }
    let mean = train_x.mean_axis(Axis(0)).expect("nonempty");
    let std = train_x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let norm = |x: ArrayView2<f64>| (&x - &mean) / &std;
    let xs = norm(train_x);
    let xt = norm(test_x);

    let mut onehot = Array2::<f64>::zeros((n, num_classes));
    for (i, &y) in train_y.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, num_classes));
    let mut b = Array1::<f64>::zeros(num_classes);
    for _ in 0..opts.iterations {
        let logits = xs.dot(&w) + &b;
        let p = log_softmax(logits.view()).mapv(f64::exp);
        let g = (p - &onehot) / n as f64;
        let gw = xs.t().dot(&g) + &w * opts.l2;
        w.scaled_add(-opts.lr, &gw);
        b.scaled_add(-opts.lr, &g.sum_axis(Axis(0)));
    }
    let pred = crate::model::argmax_rows((xt.dot(&w) + &b).view());
    let correct = pred.iter().zip(test_y).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / test_y.len() as f64)
}
