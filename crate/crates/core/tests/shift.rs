mod common;

use common::SyntheticData;
use crossid_core::shift::{mmd_statistic, pairwise_shift_audit, permutation_test, AuditOptions};
use crossid_core::synthetic::GenerativeSpec;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

#[test]
fn unbiased_statistic_has_zero_mean_under_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let stats: Vec<f64> = (0..500)
        .map(|_| {
            let x = gaussian(&mut rng, 15, 3);
            let y = gaussian(&mut rng, 15, 3);
            mmd_statistic(x.view(), y.view(), 1.5).unwrap()
        })
        .collect();
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(mean.abs() < 2.0 * se, "mean {mean:.3e}, se {se:.3e}");
}

fn audit(spec: GenerativeSpec) -> crossid_core::shift::ShiftAudit<f64> {
    let data = SyntheticData::new(spec);
    let opts = AuditOptions {
        budget: 80,
        n_permutations: 200,
        seed: 5,
        bandwidth: None,
    };
    pairwise_shift_audit(&data.manifest, &mut data.store(), opts).unwrap()
}

fn pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |a| (a + 1..m).map(move |b| (a, b)))
}

#[test]
fn identical_domains_are_not_flagged() {
    let spec = GenerativeSpec {
        num_records: 1500,
        style_shift_scale: 1e-9,
        interaction_scale: 1e-9,
        label_prior_concentration: 1e6,
        ..GenerativeSpec::default()
    };
    let a = audit(spec);
    for (i, j) in pairs(5) {
        let p = a.get(i, j).unwrap().p_value;
        assert!(p > 0.01, "pair ({i}, {j}) p = {p}");
    }
}

#[test]
fn strong_style_shift_is_flagged_everywhere() {
    let a = audit(GenerativeSpec {
        num_records: 1500,
        ..GenerativeSpec::default()
    });
    for (i, j) in pairs(5) {
        assert!(a.get(i, j).unwrap().p_value < 0.05);
    }
}

#[test]
fn audit_table_is_symmetric_with_empty_diagonal() {
    let a = audit(GenerativeSpec {
        num_records: 600,
        ..GenerativeSpec::default()
    });
    for i in 0..5 {
        assert!(a.get(i, i).is_none());
        for j in 0..5 {
            assert_eq!(a.get(i, j), a.get(j, i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn p_value_follows_add_one_rule(seed in any::<u64>(), n in 2usize..12, m in 2usize..12, perms in 100usize..160) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, 2);
        let y = gaussian(&mut rng, m, 2);
        let r = permutation_test(x.view(), y.view(), perms, seed, None).unwrap();
        let count = r.p_value * (perms + 1) as f64;
        prop_assert!((count - count.round()).abs() < 1e-9);
        prop_assert!(count.round() >= 1.0 && count.round() <= (perms + 1) as f64);
    }

    #[test]
    fn swapping_samples_gives_the_same_result(seed in any::<u64>(), n in 2usize..10, m in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, 3);
        let y = gaussian(&mut rng, m, 3);
        let xy = permutation_test(x.view(), y.view(), 100, seed, None).unwrap();
        let yx = permutation_test(y.view(), x.view(), 100, seed, None).unwrap();
        prop_assert_eq!(xy.p_value, yx.p_value);
        prop_assert!((xy.statistic - yx.statistic).abs() < 1e-12);
    }
}
