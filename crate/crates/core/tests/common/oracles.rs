//! Worked loss examples checked against closed forms.

use crossid_core::config::ZeroRowPolicy;
use crossid_core::losses::{
    alignment_loss, bbse_alpha, class_confusion, domain_loss, gaussian_kl, mcc_loss, mcc_weights, prediction_entropy,
    tempered_softmax, total_loss, update_centroids, vae_loss, weighted_cls_loss, BbseOptions, CentroidBank,
    ObjectiveParts,
};
use crossid_core::{ClassWeightVector, Identity};
use ndarray::{array, Array1, Array2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

fn bank(k: usize, centroids: &[Vec<f64>]) -> CentroidBank<f64> {
    let dim = centroids[0].len();
    let mut b = CentroidBank::new("oracle", k, dim);
    let feats = Array2::from_shape_fn((centroids.len(), dim), |(i, j)| centroids[i][j]);
    b.update(feats.view(), &(0..centroids.len()).collect::<Vec<_>>(), 0.0).unwrap();
    b
}

/// Two-class BBSE with a known confusion matrix; relative error of the
/// recovered target prior from `n` simulated target predictions.
pub fn two_class_bbse_error(n: usize, seed: u64) -> f64 {
    let c = array![[0.9, 0.2], [0.1, 0.8]];
    let (p_s, p_t) = (array![0.5, 0.5], [0.25, 0.75]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = WeightedIndex::new(p_t).unwrap();
    let preds: Vec<_> = (0..2).map(|y| WeightedIndex::new(c.column(y).to_vec()).unwrap()).collect();
    let mut hist = Array1::<f64>::zeros(2);
    for _ in 0..n {
        hist[preds[labels.sample(&mut rng)].sample(&mut rng)] += 1.0;
    }
    hist /= n as f64;
    let est = bbse_alpha(c.view(), hist.view(), p_s.view(), &BbseOptions::default()).unwrap();
    let q = est.target_prior.unwrap();
    q.iter().zip(p_t).map(|(a, t)| (a - t).abs() / t).fold(0.0, f64::max)
}

/// `(name, holds)` for every worked loss example.
pub fn loss_oracles() -> Vec<(&'static str, bool)> {
    let mut out = Vec::new();
    let mut check = |name, ok| out.push((name, ok));
    let eps = 1e-5;
    let k = 4usize;
    let ln_k = (k as f64).ln();

    // classification
    let labels: Vec<Identity> = (0..3).map(Identity).collect();
    let ones = ClassWeightVector::ones(k);
    let confident = Array2::<f64>::from_shape_fn((3, k), |(i, j)| if i == j { 60.0 } else { 0.0 });
    check(
        "cls: perfect predictions give 0",
        weighted_cls_loss(confident.view(), &labels, &ones, 3).unwrap().value.abs() < 1e-12,
    );
    let flat = Array2::<f64>::zeros((3, k));
    let uniform_cls = weighted_cls_loss(flat.view(), &labels, &ones, 7).unwrap().value;
    check("cls: uniform predictions give (B/N)·ln K", close(uniform_cls, 3.0 / 7.0 * ln_k, 1e-12));
    let twice = weighted_cls_loss(flat.view(), &labels, &ones.scaled(2.0), 7).unwrap().value;
    check("cls: doubling alpha doubles the loss", close(twice, 2.0 * uniform_cls, 1e-12));

    // bbse
    let eye = Array2::<f64>::eye(3);
    let prior = array![0.2, 0.3, 0.5];
    let est = bbse_alpha(eye.view(), prior.view(), prior.view(), &BbseOptions::default()).unwrap();
    check("bbse: no shift gives alpha = 1", all_close(est.alpha.as_slice(), &[1.0; 3], 1e-12));
    let eye2 = Array2::<f64>::eye(2);
    let est = bbse_alpha(eye2.view(), array![0.8, 0.2].view(), array![0.5, 0.5].view(), &BbseOptions::default()).unwrap();
    check("bbse: identity confusion divides directly", all_close(est.alpha.as_slice(), &[1.6, 0.4], 1e-12));
    check("bbse: 2x2 target prior within 5% at 10k", two_class_bbse_error(10_000, 17) < 0.05);

    // tempered softmax
    let p = tempered_softmax(array![[0.0, 0.0]].view(), 3.7).unwrap();
    check("softmax: symmetric logits", all_close(p.as_slice().unwrap(), &[0.5, 0.5], 1e-15));
    let p = tempered_softmax(array![[2f64.ln(), 0.0]].view(), 1.0).unwrap();
    check("softmax: (ln 2, 0) gives (2/3, 1/3)", all_close(p.as_slice().unwrap(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    let p = tempered_softmax(array![[3.0, -2.0, 0.5]].view(), 1e6).unwrap();
    check("softmax: large temperature is uniform", p.iter().all(|&v| close(v, 1.0 / 3.0, 1e-5)));

    // entropy
    let uni = Array1::from_elem(k, 1.0 / k as f64);
    check(
        "entropy: uniform gives ln K",
        close(prediction_entropy(uni.view(), eps), ln_k, 2.0 * eps * k as f64),
    );
    let one_hot = array![1.0, 0.0, 0.0, 0.0];
    check(
        "entropy: one-hot is near 0",
        prediction_entropy(one_hot.view(), eps).abs() <= (k as f64 - 1.0) * eps * eps.ln().abs(),
    );
    check(
        "entropy: (0.5, 0.5) gives ln 2",
        close(prediction_entropy(array![0.5, 0.5].view(), eps), 2f64.ln(), 1e-4),
    );

    // mcc weights
    let w = mcc_weights(array![0.7, 0.7, 0.7].view()).unwrap();
    check("mcc weights: equal entropies give 1", all_close(w.as_slice().unwrap(), &[1.0; 3], 1e-15));
    let w = mcc_weights(array![0.1, 1.3, 0.4, 2.2].view()).unwrap();
    check("mcc weights: sum to B", close(w.sum(), 4.0, 1e-12));
    let w = mcc_weights(array![0.0, 2f64.ln()].view()).unwrap();
    check("mcc weights: H = (0, ln 2) gives (8/7, 6/7)", all_close(w.as_slice().unwrap(), &[8.0 / 7.0, 6.0 / 7.0], 1e-15));

    // class confusion and mcc loss
    let hot = Array2::from_shape_fn((3, 5), |(i, j)| if j == 2 * i % 5 { 1.0 } else { 0.0 });
    let c = class_confusion(hot.view(), Array1::ones(3).view(), ZeroRowPolicy::Uniform).unwrap();
    let diag_only = c.raw.indexed_iter().all(|((i, j), &v)| i == j || v == 0.0);
    let touched_identity = [0usize, 2, 4].iter().all(|&r| (0..5).all(|j| c.normalized[[r, j]] == if r == j { 1.0 } else { 0.0 }));
    check("confusion: one-hot rows are diagonal", diag_only && touched_identity);
    let u = Array2::from_elem((6, k), 1.0 / k as f64);
    let c = class_confusion(u.view(), Array1::ones(6).view(), ZeroRowPolicy::Uniform).unwrap();
    check("confusion: uniform rows give 1/K", c.normalized.iter().all(|&v| close(v, 1.0 / k as f64, 1e-15)));
    let mixed = tempered_softmax(Array2::from_shape_fn((5, k), |(i, j)| ((i * 7 + j * 3) % 5) as f64).view(), 1.3).unwrap();
    let c = class_confusion(mixed.view(), array![0.5, 1.0, 2.0, 1.5, 0.7].view(), ZeroRowPolicy::Uniform).unwrap();
    check("confusion: rows sum to 1", c.normalized.rows().into_iter().all(|r| close(r.sum(), 1.0, 1e-6)));
    check("mcc: identity gives 0", mcc_loss::<f64>(Array2::eye(k).view()).abs() < 1e-15);
    let uniform_c = Array2::from_elem((k, k), 1.0 / k as f64);
    check("mcc: uniform gives (K-1)/K", close(mcc_loss(uniform_c.view()), (k as f64 - 1.0) / k as f64, 1e-12));
    let hot60 = Array2::<f64>::from_shape_fn((60, 60), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let c = class_confusion(hot60.view(), Array1::ones(60).view(), ZeroRowPolicy::Uniform).unwrap();
    check("mcc: K=60 one-hot batch gives 0", mcc_loss(c.normalized.view()).abs() < 1e-12);

    // vae
    let f = array![[0.3, -1.2], [0.8, 0.1]];
    let z = Array2::<f64>::zeros((2, 3));
    let v = vae_loss(f.view(), f.view(), z.view(), z.view(), 1.0, 0.0).unwrap();
    check("vae: matched prior and recon gives 0", v.value.abs() < 1e-15);
    let v = vae_loss(f.view(), f.view(), z.view(), z.view(), 1.0, 5.0).unwrap();
    check("vae: capacity 5 with zero KL gives 5", close(v.value, 5.0, 1e-15));
    check("vae: KL of N(1, 1) is 0.5", close(gaussian_kl(&[1.0], &[0.0]), 0.5, 1e-15));

    // domain loss
    let m = 5;
    let cams = [0usize, 3, 1];
    let sure = Array2::from_shape_fn((3, m), |(i, j)| if cams[i] == j { 80.0 } else { 0.0 });
    check("domain: perfect predictions near 0", domain_loss(sure.view(), &cams).unwrap().value < 1e-12);
    let even = Array2::<f64>::zeros((3, m));
    check("domain: uniform over 5 gives ln 5", close(domain_loss(even.view(), &cams).unwrap().value, 5f64.ln(), 1e-12));
    let wrong = Array2::from_shape_fn((1, m), |(_, j)| if j == 4 { 1e4 } else { 0.0 });
    check("domain: confident wrong hits the clamp", close(domain_loss(wrong.view(), &[0]).unwrap().value, 30.0, 1e-12));

    // centroids
    let start = bank(2, &[vec![0.5], vec![-1.0]]);
    let batch = array![[3.0], [5.0]];
    let kept = update_centroids(&start, batch.view(), &[0, 0], 1.0).unwrap();
    check("centroid: gamma 1 keeps centroids", kept.centroid(0) == start.centroid(0));
    let fresh = update_centroids(&start, batch.view(), &[0, 0], 0.0).unwrap();
    check("centroid: gamma 0 takes the batch mean", fresh.centroid(0).unwrap()[0] == 4.0);
    let zero = bank(1, &[vec![0.0]]);
    let ema = update_centroids(&zero, array![[1.0]].view(), &[0], 0.9).unwrap();
    check("centroid: gamma 0.9 from 0 toward 1 gives 0.1", close(ema.centroid(0).unwrap()[0], 0.1, 1e-15));

    // alignment
    let a = bank(3, &[vec![0.0, 1.0], vec![2.0, 2.0], vec![-1.0, 0.5]]);
    let ones3 = ClassWeightVector::ones(3);
    check("align: identical banks give 0", alignment_loss(&a, &a, &ones3).unwrap().value == 0.0);
    let shifted = bank(3, &[vec![1.0, 1.0], vec![2.0, 3.0], vec![-1.0, -0.5]]);
    let unit = alignment_loss(&a, &shifted, &ones3).unwrap().value;
    check("align: unit distances sum to K", close(unit, 3.0, 1e-12));
    let scaled = alignment_loss(&a, &shifted, &ones3.scaled(2.5)).unwrap().value;
    check("align: alpha scale is linear", close(scaled, 2.5 * unit, 1e-12));

    // total
    let parts = ObjectiveParts {
        identity: 1.3,
        disentangle: 0.4,
        align: 2.0,
    };
    check("total: zero lambdas keep the identity term", total_loss(&parts, 0.0, 0.0) == 1.3);
    let unit_parts = ObjectiveParts {
        identity: 1.0,
        disentangle: 1.0,
        align: 1.0,
    };
    check("total: unit parts with (1, 0.1) give 2.1", close(total_loss(&unit_parts, 1.0, 0.1), 2.1, 1e-15));
    out
}
