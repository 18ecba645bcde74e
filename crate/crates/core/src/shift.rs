//! Kernel two-sample statistics for cross-camera shift.
//!
//! Gaussian kernel `k(a, b) = exp(-‖a - b‖² / 2σ²)` with the median
//! heuristic for σ, the unbiased MMD² U-statistic, and a permutation test
//! with the add-one p-value `(1 + #{T_perm ≥ T_obs}) / (1 + P)`.
//!
//! The permutation test first sorts the pooled rows into a canonical order,
//! so it is exactly invariant to swapping `X` and `Y`. Permutation `p` uses
//! its own random stream, so results do not depend on scheduling.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::Manifest;
use crate::model::FeatureStore;
use crate::scalar::Scalar;

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const MIN_PERMUTATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MmdResult<S> {
    pub statistic: S,
    pub p_value: f64,
    pub n_permutations: usize,
    pub bandwidth: S,
    pub sample_sizes: (usize, usize),
}

fn sq_dist<S: Scalar>(a: ndarray::ArrayView1<S>, b: ndarray::ArrayView1<S>) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// σ with `2σ² = median ‖a_i - a_j‖²` over all ordered pairs `(i, j)`.
///
/// Ordered pairs include `i = j`, and the median is the upper one
/// (sorted index `⌊L/2⌋`). That makes the value exactly invariant to
/// duplicating the dataset, and two points at distance `d` give `σ = d/√2`.
pub fn median_heuristic<S: Scalar>(pooled: ArrayView2<S>) -> Result<S> {
    let n = pooled.nrows();
    if n < 2 {
        return Err(Error::Invalid(format!("median heuristic needs at least 2 samples, got {n}")));
    }
    let mut d = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            d.push(if i == j { S::zero() } else { sq_dist(pooled.row(i), pooled.row(j)) });
        }
    }
    let mid = d.len() / 2;
    let (_, &mut med, _) = d.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    if !(med > S::zero()) || !med.is_finite() {
        return Err(Error::Degenerate("degenerate bandwidth".into()));
    }
    Ok((med / S::lit(2.0)).sqrt())
}

fn kernel<S: Scalar>(sq: S, bandwidth: S) -> S {
    (-sq / (S::lit(2.0) * bandwidth * bandwidth)).exp()
}

fn check_dims<S>(x: ArrayView2<S>, y: ArrayView2<S>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::dim("mmd sample width", x.ncols(), y.ncols()));
    }
    Ok(())
}

fn mean_off_diagonal<S: Scalar>(a: ArrayView2<S>, bandwidth: S) -> S {
    let n = a.nrows();
    let mut s = S::zero();
    for i in 0..n {
        for j in i + 1..n {
            s += kernel(sq_dist(a.row(i), a.row(j)), bandwidth);
        }
    }
    S::lit(2.0) * s / S::from_count(n * (n - 1))
}

fn mean_cross<S: Scalar>(x: ArrayView2<S>, y: ArrayView2<S>, bandwidth: S) -> S {
    let mut s = S::zero();
    for a in x.rows() {
        for b in y.rows() {
            s += kernel(sq_dist(a, b), bandwidth);
        }
    }
    s / S::from_count(x.nrows() * y.nrows())
}

/// Unbiased MMD²; may be slightly negative.
pub fn mmd_statistic<S: Scalar>(x: ArrayView2<S>, y: ArrayView2<S>, bandwidth: S) -> Result<S> {
    check_dims(x, y)?;
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::Invalid("unbiased MMD needs at least 2 samples per side".into()));
    }
    if !(bandwidth > S::zero()) {
        return Err(Error::Invalid("bandwidth must be positive".into()));
    }
    Ok(mean_off_diagonal(x, bandwidth) + mean_off_diagonal(y, bandwidth)
        - S::lit(2.0) * mean_cross(x, y, bandwidth))
}

/// Biased (V-statistic) MMD², including the diagonal kernel terms.
pub fn mmd_biased<S: Scalar>(x: ArrayView2<S>, y: ArrayView2<S>, bandwidth: S) -> Result<S> {
    check_dims(x, y)?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::Invalid("empty sample".into()));
    }
    Ok(mean_cross(x, x, bandwidth) + mean_cross(y, y, bandwidth) - S::lit(2.0) * mean_cross(x, y, bandwidth))
}

/// Pooled kernel matrix with the U-statistic evaluated from group masks.
struct PooledKernel<S> {
    k: Array2<S>,
}

impl<S: Scalar> PooledKernel<S> {
    fn new(pooled: ArrayView2<S>, bandwidth: S) -> Self {
        let n = pooled.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in i + 1..n {
                let v = kernel(sq_dist(pooled.row(i), pooled.row(j)), bandwidth);
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        PooledKernel { k }
    }

    /// `in_a[i]` marks group A; both groups need at least 2 members.
    fn statistic(&self, in_a: &[bool], n_a: usize) -> S {
        let n = in_a.len();
        let n_b = n - n_a;
        let (mut aa, mut bb, mut ab) = (S::zero(), S::zero(), S::zero());
        for i in 0..n {
            let row = self.k.row(i);
            for j in i + 1..n {
                let v = row[j];
                match (in_a[i], in_a[j]) {
                    (true, true) => aa += v,
                    (false, false) => bb += v,
                    _ => ab += v,
                }
            }
        }
        let two = S::lit(2.0);
        two * aa / S::from_count(n_a * (n_a - 1)) + two * bb / S::from_count(n_b * (n_b - 1))
            - two * ab / S::from_count(n_a * n_b)
    }
}

fn lex_cmp<S: Scalar>(a: ndarray::ArrayView1<S>, b: ndarray::ArrayView1<S>) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Permutation test of `X` vs `Y` with `n_permutations` size-preserving re-splits.
///
/// `bandwidth = None` uses the median heuristic on the pooled sample.
pub fn permutation_test<S: Scalar>(
    x: ArrayView2<S>,
    y: ArrayView2<S>,
    n_permutations: usize,
    seed: u64,
    bandwidth: Option<S>,
) -> Result<MmdResult<S>> {
    check_dims(x, y)?;
    let (n, m) = (x.nrows(), y.nrows());
    if n < 2 || m < 2 {
        return Err(Error::Invalid(format!("sample too small for a permutation test: ({n}, {m})")));
    }
    if n_permutations < MIN_PERMUTATIONS {
        return Err(Error::Invalid(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_permutations}"
        )));
    }
    let pooled = concatenate![Axis(0), x, y];
    let bandwidth = match bandwidth {
        Some(b) if b > S::zero() => b,
        Some(_) => return Err(Error::Invalid("bandwidth must be positive".into())),
        None => median_heuristic(pooled.view())?,
    };

    // canonical row order; ties keep X-before-Y, which cannot affect the
    // statistic because tied rows are identical
    let mut order: Vec<usize> = (0..n + m).collect();
    order.sort_by(|&a, &b| lex_cmp(pooled.row(a), pooled.row(b)));
    let sorted = pooled.select(Axis(0), &order);
    let pk = PooledKernel::new(sorted.view(), bandwidth);

    // group A is the smaller side (X on ties of size, but then n = m)
    let a_is_x = n <= m;
    let n_a = n.min(m);
    let observed_mask: Vec<bool> = order.iter().map(|&o| (o < n) == a_is_x).collect();
    let observed = pk.statistic(&observed_mask, n_a);

    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut idx: Vec<usize> = (0..n + m).collect();
            idx.shuffle(&mut rng);
            let mut mask = vec![false; n + m];
            for &i in &idx[..n_a] {
                mask[i] = true;
            }
            usize::from(pk.statistic(&mask, n_a) >= observed)
        })
        .sum();

    Ok(MmdResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + n_permutations) as f64,
        n_permutations,
        bandwidth,
        sample_sizes: (n, m),
    })
}

/// Upper-triangular table of camera-pair tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ShiftAudit<S> {
    pub cameras: Vec<String>,
    pub budget: usize,
    /// `table[a][b]` is set for `a < b` and mirrored for `a > b`; the diagonal is empty.
    pub table: Vec<Vec<Option<MmdResult<S>>>>,
}

impl<S: Scalar> ShiftAudit<S> {
    pub fn get(&self, a: usize, b: usize) -> Option<&MmdResult<S>> {
        self.table.get(a).and_then(|r| r.get(b)).and_then(Option::as_ref)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "camera_a\tcamera_b\tn\tm\tbandwidth\tmmd2\tp_value");
        for a in 0..self.cameras.len() {
            for b in a + 1..self.cameras.len() {
                if let Some(r) = self.get(a, b) {
                    let _ = writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{:.6}\t{:.6e}\t{:.4}",
                        self.cameras[a],
                        self.cameras[b],
                        r.sample_sizes.0,
                        r.sample_sizes.1,
                        r.bandwidth,
                        r.statistic.as_f64(),
                        r.p_value
                    );
                }
            }
        }
        out
    }
}

/// Options for [`pairwise_shift_audit`].
#[derive(Clone, Copy, Debug)]
pub struct AuditOptions {
    pub budget: usize,
    pub n_permutations: usize,
    pub seed: u64,
    pub bandwidth: Option<f64>,
}

/// Tests every unordered camera pair on `budget` samples per camera.
pub fn pairwise_shift_audit<S: Scalar>(
    manifest: &Manifest,
    store: &mut FeatureStore,
    opts: AuditOptions,
) -> Result<ShiftAudit<S>> {
    let m = manifest.num_cameras();
    if m < 2 {
        return Err(Error::Invalid(format!("shift audit needs at least 2 cameras, got {m}")));
    }
    if opts.budget < 2 {
        return Err(Error::Invalid("budget must be at least 2".into()));
    }
    let mut per_camera: Vec<Vec<&str>> = vec![Vec::new(); m];
    for e in &manifest.entries {
        per_camera[e.camera.0].push(e.image_ref.as_str());
    }
    let mut feats = Vec::with_capacity(m);
    for (c, refs) in per_camera.iter_mut().enumerate() {
        if refs.len() < opts.budget {
            return Err(Error::Invalid(format!(
                "camera {:?} has {} samples, fewer than the budget {}",
                manifest.index.cameras[c],
                refs.len(),
                opts.budget
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(u64::MAX - c as u64);
        refs.shuffle(&mut rng);
        feats.push(store.batch::<S>(&refs[..opts.budget])?);
    }
    let mut table = vec![vec![None; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let pair_seed = opts.seed.wrapping_add((a * m + b) as u64);
            let r = permutation_test(
                feats[a].view(),
                feats[b].view(),
                opts.n_permutations,
                pair_seed,
                opts.bandwidth.map(S::lit),
            )?;
            table[b][a] = Some(r.clone());
            table[a][b] = Some(r);
        }
    }
    Ok(ShiftAudit {
        cameras: manifest.index.cameras.clone(),
        budget: opts.budget,
        table,
    })
}
