//! Central finite-difference checks for every loss and its hand-written gradient.

use crossid_core::config::ZeroRowPolicy;
use crossid_core::losses::{
    alignment_loss, class_confusion, class_confusion_vjp, domain_loss, mcc_loss, mcc_objective, mcc_weights,
    mcc_weights_vjp, prediction_entropy, prediction_entropy_grad, tempered_softmax, tempered_softmax_vjp,
    total_loss, vae_loss, weighted_cross_entropy, CentroidBank, ObjectiveParts,
};
use crossid_core::ClassWeightVector;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;
pub const MAX_BATCH: usize = 8;
pub const MAX_CLASSES: usize = 6;

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`.
///
/// The floor sits well above central-difference roundoff, so a gradient that
/// is exactly zero (a one-sample batch, say) compares absolutely.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = xp[idx];
        xp[idx] = orig + STEP;
        let up = f(&xp);
        xp[idx] = orig - STEP;
        let down = f(&xp);
        xp[idx] = orig;
        g[idx] = (up - down) / (2.0 * STEP);
    }
    g
}

fn rel(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    relative_error(analytic.as_slice().unwrap(), numeric.as_slice().unwrap())
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=MAX_BATCH), rng.random_range(2..=MAX_CLASSES))
}

fn weighted_ce(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = dims(rng);
    let logits = normal(rng, (b, k), 2.0);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.1..5.0)).collect();
    let norm = rng.random_range(b..=2 * b);
    let g = weighted_cross_entropy(logits.view(), &labels, &w, norm).unwrap().grad;
    let n = numeric_grad(&logits, |l| weighted_cross_entropy(l.view(), &labels, &w, norm).unwrap().value);
    rel(&g, &n)
}

fn domain(rng: &mut ChaCha8Rng) -> f64 {
    let (b, m) = dims(rng);
    let logits = normal(rng, (b, m), 2.0);
    let cams: Vec<usize> = (0..b).map(|_| rng.random_range(0..m)).collect();
    let g = domain_loss(logits.view(), &cams).unwrap().grad;
    let n = numeric_grad(&logits, |l| domain_loss(l.view(), &cams).unwrap().value);
    rel(&g, &n)
}

fn softmax(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = dims(rng);
    let logits = normal(rng, (b, k), 2.0);
    let t = rng.random_range(0.5..4.0);
    let up = normal(rng, (b, k), 1.0);
    let p = tempered_softmax(logits.view(), t).unwrap();
    let g = tempered_softmax_vjp(p.view(), up.view(), t);
    let n = numeric_grad(&logits, |l| {
        let p = tempered_softmax(l.view(), t).unwrap();
        (&p * &up).sum()
    });
    rel(&g, &n)
}

fn entropy(rng: &mut ChaCha8Rng) -> f64 {
    let (_, k) = dims(rng);
    let p = tempered_softmax(normal(rng, (1, k), 1.0).view(), 1.0).unwrap();
    let eps = 1e-5;
    let g = prediction_entropy_grad(p.row(0), eps).insert_axis(ndarray::Axis(0));
    let n = numeric_grad(&p, |q| prediction_entropy(q.row(0), eps));
    rel(&g, &n)
}

fn weights(rng: &mut ChaCha8Rng) -> f64 {
    let (b, _) = dims(rng);
    let h = normal(rng, (1, b), 1.0).mapv(f64::abs);
    let up = Array1::from_iter((0..b).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let g = mcc_weights_vjp(h.row(0), up.view()).insert_axis(ndarray::Axis(0));
    let n = numeric_grad(&h, |e| mcc_weights(e.row(0)).unwrap().dot(&up));
    rel(&g, &n)
}

fn confusion(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = dims(rng);
    let p = tempered_softmax(normal(rng, (b, k), 1.5).view(), 1.0).unwrap();
    let w = Array1::from_iter((0..b).map(|_| rng.random_range(0.2..2.0)));
    let up = normal(rng, (k, k), 1.0);
    let c = class_confusion(p.view(), w.view(), ZeroRowPolicy::Uniform).unwrap();
    let (gp, gw) = class_confusion_vjp(p.view(), w.view(), &c, up.view());
    let value = |p: &Array2<f64>, w: &Array1<f64>| {
        (&class_confusion(p.view(), w.view(), ZeroRowPolicy::Uniform).unwrap().normalized * &up).sum()
    };
    let np = numeric_grad(&p, |q| value(q, &w));
    let w2 = w.clone().insert_axis(ndarray::Axis(0));
    let nw = numeric_grad(&w2, |v| value(&p, &v.row(0).to_owned()));
    rel(&gp, &np).max(rel(&gw.insert_axis(ndarray::Axis(0)), &nw))
}

fn mcc(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = dims(rng);
    let logits = normal(rng, (b, k), 2.0);
    let t = rng.random_range(1.0..3.0);
    let eps = 1e-5;
    let policy = ZeroRowPolicy::Uniform;
    let g = mcc_objective(logits.view(), t, eps, policy).unwrap().grad;
    let n = numeric_grad(&logits, |l| mcc_objective(l.view(), t, eps, policy).unwrap().value);
    rel(&g, &n)
}

fn vae(rng: &mut ChaCha8Rng) -> f64 {
    let (b, d) = dims(rng);
    let z = rng.random_range(2..=6);
    let f = normal(rng, (b, d), 1.0);
    let recon = normal(rng, (b, d), 1.0);
    let mu = normal(rng, (b, z), 1.0);
    let logvar = normal(rng, (b, z), 0.5);
    let beta = rng.random_range(0.1..3.0);
    let kl = vae_loss(f.view(), recon.view(), mu.view(), logvar.view(), beta, 0.0).unwrap().kl;
    // keep |KL - C| away from its kink
    let capacity = if rng.random_bool(0.5) { 0.0 } else { kl + 1.0 + rng.random_range(0.0..3.0) };
    let l = vae_loss(f.view(), recon.view(), mu.view(), logvar.view(), beta, capacity).unwrap();
    let val = |f: &Array2<f64>, r: &Array2<f64>, m: &Array2<f64>, lv: &Array2<f64>| {
        vae_loss(f.view(), r.view(), m.view(), lv.view(), beta, capacity).unwrap().value
    };
    [
        rel(&l.grad_recon, &numeric_grad(&recon, |r| val(&f, r, &mu, &logvar))),
        rel(&l.grad_target, &numeric_grad(&f, |x| val(x, &recon, &mu, &logvar))),
        rel(&l.grad_mu, &numeric_grad(&mu, |m| val(&f, &recon, m, &logvar))),
        rel(&l.grad_logvar, &numeric_grad(&logvar, |lv| val(&f, &recon, &mu, lv))),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Alignment through fresh centroid banks: the first update sets each
/// centroid to its batch mean, so the loss is a function of the z3 rows.
fn alignment(rng: &mut ChaCha8Rng) -> f64 {
    let (b, k) = dims(rng);
    let d = rng.random_range(1..=4);
    let src = normal(rng, (b, d), 1.0);
    let tgt = normal(rng, (b, d), 1.0);
    let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let yt: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
    let alpha = ClassWeightVector::new((0..k).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
    let value = |s: &Array2<f64>, t: &Array2<f64>| {
        let mut bs = CentroidBank::new("s", k, d);
        let mut bt = CentroidBank::new("t", k, d);
        bs.update(s.view(), &ys, 0.9).unwrap();
        bt.update(t.view(), &yt, 0.9).unwrap();
        alignment_loss(&bs, &bt, &alpha).unwrap().value
    };
    let mut bs = CentroidBank::new("s", k, d);
    let mut bt = CentroidBank::new("t", k, d);
    let us = bs.update(src.view(), &ys, 0.9).unwrap();
    let ut = bt.update(tgt.view(), &yt, 0.9).unwrap();
    let al = alignment_loss(&bs, &bt, &alpha).unwrap();
    let mut gs = Array2::zeros((b, d));
    let mut gt = Array2::zeros((b, d));
    for (class, g) in &al.grad_source {
        for (updates, grad, sign) in [(&us, &mut gs, 1.0), (&ut, &mut gt, -1.0)] {
            if let Some(u) = updates.iter().find(|u| u.class == *class) {
                for &r in &u.rows {
                    grad.row_mut(r).scaled_add(sign * u.batch_weight, g);
                }
            }
        }
    }
    let ns = numeric_grad(&src, |s| value(s, &tgt));
    let nt = numeric_grad(&tgt, |t| value(&src, t));
    rel(&gs, &ns).max(rel(&gt, &nt))
}

fn total(rng: &mut ChaCha8Rng) -> f64 {
    let l = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
    let x = normal(rng, (1, 3), 2.0);
    let parts = |x: &Array2<f64>| ObjectiveParts {
        identity: x[[0, 0]],
        disentangle: x[[0, 1]],
        align: x[[0, 2]],
    };
    let g = crossid_core::losses::total_loss_grad(l[0], l[1]);
    let a = ndarray::array![[g.identity, g.disentangle, g.align]];
    rel(&a, &numeric_grad(&x, |v| total_loss(&parts(v), l[0], l[1])))
}

/// Also covers the plain MCC penalty on a fixed confusion matrix, whose
/// subgradient is exact away from zero entries.
fn mcc_penalty(rng: &mut ChaCha8Rng) -> f64 {
    let (_, k) = dims(rng);
    let c = normal(rng, (k, k), 1.0).mapv(|v| if v.abs() < 0.05 { 0.5 } else { v });
    let g = crossid_core::losses::mcc_loss_grad(c.view());
    rel(&g, &numeric_grad(&c, |m| mcc_loss(m.view())))
}

/// Worst relative error over [`INSTANCES`] random instances of each loss.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    type Check = fn(&mut ChaCha8Rng) -> f64;
    let checks: [(&str, Check); 11] = [
        ("weighted_cross_entropy", weighted_ce),
        ("domain_loss", domain),
        ("tempered_softmax", softmax),
        ("prediction_entropy", entropy),
        ("mcc_weights", weights),
        ("class_confusion", confusion),
        ("mcc_penalty", mcc_penalty),
        ("mcc_objective", mcc),
        ("vae_loss", vae),
        ("alignment_loss", alignment),
        ("total_loss", total),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let worst = (0..INSTANCES).map(|_| check(&mut rng)).fold(0.0, f64::max);
            (*name, worst)
        })
        .collect()
}
