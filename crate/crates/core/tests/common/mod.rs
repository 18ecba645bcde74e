#![allow(dead_code)]

pub mod gradients;
pub mod oracles;

use std::time::{Duration, Instant};

use crossid_core::config::{ExperimentConfig, FeatureMode};
use crossid_core::ingestion::{associate, dice_coefficient, Detection, Frame, Manifest, Provenance};
use crossid_core::losses::{bbse_alpha, BbseOptions};
use crossid_core::model::FeatureStore;
use crossid_core::shift::permutation_test;
use crossid_core::synthetic::{export_manifest, generate, ExportMode, GenerativeSpec, GroundTruthRecord};
use crossid_core::trainer::{linear_probe_accuracy, run_loco_suite, LocoReport, Method, ProbeOptions};
use crossid_core::{BoundingBox, CameraId, Subspace};
use ndarray::{s, Array1, Array2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------- BBSE

pub const BBSE_SIZES: [usize; 3] = [1_000, 10_000, 100_000];
pub const BBSE_REPEATS: usize = 20;

/// Six-class label shift with a known confusion matrix.
pub struct BbseProblem {
    pub confusion: Array2<f64>,
    pub source_prior: Array1<f64>,
    pub target_prior: Array1<f64>,
}

impl BbseProblem {
    pub fn six_class() -> Self {
        let k = 6;
        // column-stochastic: 0.7 on the diagonal, the rest spread toward neighbours
        let confusion = Array2::from_shape_fn((k, k), |(i, j)| {
            let d = (i as i64 - j as i64).rem_euclid(k as i64);
            match d {
                0 => 0.7,
                1 => 0.15,
                2 => 0.05,
                _ => 0.1 / 3.0,
            }
        });
        BbseProblem {
            confusion,
            source_prior: Array1::from_elem(k, 1.0 / k as f64),
            target_prior: ndarray::array![0.35, 0.25, 0.15, 0.1, 0.1, 0.05],
        }
    }

    pub fn true_alpha(&self) -> Array1<f64> {
        &self.target_prior / &self.source_prior
    }

    /// Histogram of `n` simulated target predictions.
    pub fn target_predictions(&self, n: usize, rng: &mut impl Rng) -> Array1<f64> {
        let k = self.source_prior.len();
        let labels = WeightedIndex::new(self.target_prior.iter()).unwrap();
        let predict: Vec<_> = (0..k)
            .map(|y| WeightedIndex::new(self.confusion.column(y).iter()).unwrap())
            .collect();
        let mut h = Array1::zeros(k);
        for _ in 0..n {
            let y = labels.sample(rng);
            h[predict[y].sample(rng)] += 1.0;
        }
        h / n as f64
    }

    /// Relative error ‖α̂ − α‖ / ‖α‖ of one estimate from `n` target samples.
    pub fn alpha_error(&self, n: usize, rng: &mut impl Rng) -> f64 {
        let hist = self.target_predictions(n, rng);
        let est = bbse_alpha(
            self.confusion.view(),
            hist.view(),
            self.source_prior.view(),
            &BbseOptions::default(),
        )
        .unwrap();
        assert!(!est.fallback);
        let truth = self.true_alpha();
        let diff: f64 = est.alpha.as_slice().iter().zip(truth.iter()).map(|(a, t)| (a - t).powi(2)).sum();
        (diff / truth.dot(&truth)).sqrt()
    }
}

/// Mean relative error at each size in [`BBSE_SIZES`].
pub fn bbse_recovery(seed: u64) -> Vec<(usize, f64)> {
    let p = BbseProblem::six_class();
    BBSE_SIZES
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
            let mean = (0..BBSE_REPEATS).map(|_| p.alpha_error(n, &mut rng)).sum::<f64>() / BBSE_REPEATS as f64;
            (n, mean)
        })
        .collect()
}

// ---------------------------------------------------------------- MMD

pub const MMD_RUNS: usize = 200;
pub const MMD_PERMUTATIONS: usize = 200;
pub const MMD_DIM: usize = 5;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, MMD_DIM), |(_, j)| {
        rng.sample::<f64, _>(StandardNormal) + if j == 0 { shift } else { 0.0 }
    })
}

/// p-values of `runs` permutation tests between `N(0, I)` and `N(shift·e1, I)`.
pub fn mmd_p_values(seed: u64, runs: usize, n: usize, shift: f64) -> Vec<f64> {
    (0..runs)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let x = gaussian(&mut rng, n, 0.0);
            let y = gaussian(&mut rng, n, shift);
            permutation_test(x.view(), y.view(), MMD_PERMUTATIONS, seed + r as u64, None)
                .unwrap()
                .p_value
        })
        .collect()
}

pub fn fraction_below(p: &[f64], level: f64) -> f64 {
    p.iter().filter(|&&v| v < level).count() as f64 / p.len() as f64
}

// ---------------------------------------------------------------- ingestion

pub fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox<f64> {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

/// The worked Dice and association examples; returns the ones that failed.
pub fn ingestion_examples() -> Vec<String> {
    let mut failed = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failed.push(what.to_string());
        }
    };
    let a = bbox(0.0, 0.0, 2.0, 1.0);
    check(dice_coefficient(&a, &a).unwrap() == 1.0, "identical boxes");
    check(
        dice_coefficient(&a, &bbox(5.0, 5.0, 6.0, 6.0)).unwrap() == 0.0,
        "disjoint boxes",
    );
    check(
        dice_coefficient(&a, &bbox(1.0, 0.0, 3.0, 1.0)).unwrap() == 0.5,
        "half-overlap boxes",
    );

    let det = |b: BoundingBox<f64>, r: String| Detection { bbox: b, image_ref: r };
    let drifting: Vec<Frame> = (0..10)
        .map(|t| Frame {
            index: t,
            detections: vec![det(bbox(t as f64, 0.0, t as f64 + 50.0, 50.0), format!("d{t}"))],
        })
        .collect();
    let out = associate(CameraId(0), &drifting, 0.8).unwrap();
    check(out.len() == 1 && out[0].len() == 10, "drifting box is one trajectory");

    let teleport: Vec<Frame> = (0..6)
        .map(|t| {
            let o = 100.0 * t as f64;
            Frame {
                index: t,
                detections: vec![
                    det(bbox(o, 0.0, o + 10.0, 10.0), format!("a{t}")),
                    det(bbox(o, 500.0, o + 10.0, 510.0), format!("b{t}")),
                ],
            }
        })
        .collect();
    let out = associate(CameraId(0), &teleport, 0.8).unwrap();
    check(out.len() == 12 && out.iter().all(|t| t.len() == 1), "teleporting boxes");

    let gap: Vec<Frame> = [0u64, 1, 3, 4]
        .iter()
        .map(|&t| Frame {
            index: t,
            detections: vec![det(bbox(0.0, 0.0, 50.0, 50.0), format!("g{t}"))],
        })
        .collect();
    let out = associate(CameraId(0), &gap, 0.8).unwrap();
    check(
        out.len() == 2 && out[0].len() == 2 && out[1].len() == 2,
        "empty frame splits the trajectory",
    );
    failed
}

/// Random-walk detections over `frames` frames with births, deaths and
/// occasional jumps.
pub fn detection_stream(frames: u64, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks: Vec<(f64, f64)> = Vec::new();
    let mut out = Vec::new();
    let mut id = 0usize;
    for t in 0..frames {
        tracks.retain(|_| rng.random::<f64>() > 0.03);
        while tracks.len() < 2 || rng.random::<f64>() < 0.05 {
            tracks.push((rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)));
            if tracks.len() >= 6 {
                break;
            }
        }
        let mut detections = Vec::new();
        for (x, y) in tracks.iter_mut() {
            if rng.random::<f64>() < 0.05 {
                *x = rng.random_range(0.0..500.0);
            }
            *x += rng.random_range(-2.0..2.0);
            *y += rng.random_range(-2.0..2.0);
            if rng.random::<f64>() < 0.9 {
                detections.push(Detection {
                    bbox: bbox(*x, *y, *x + 40.0, *y + 30.0),
                    image_ref: format!("f{t}_{id}"),
                });
                id += 1;
            }
        }
        if !detections.is_empty() {
            out.push(Frame { index: t, detections });
        }
    }
    out
}

/// Whether association over `frames` is a partition of its detections.
pub fn association_partitions(frames: &[Frame]) -> bool {
    let trajectories = associate(CameraId(0), frames, 0.8).unwrap();
    let total: usize = frames.iter().map(|f| f.detections.len()).sum();
    let mut seen: Vec<&str> = trajectories
        .iter()
        .flat_map(|t| t.members.iter().map(|m| m.image_ref.as_str()))
        .collect();
    let n = seen.len();
    seen.sort_unstable();
    seen.dedup();
    n == total && seen.len() == total
}

// ---------------------------------------------------------------- synthetic benchmark

/// Exported synthetic dataset kept alive with its directory.
pub struct SyntheticData {
    pub dir: tempfile::TempDir,
    pub records: Vec<GroundTruthRecord>,
    pub manifest: Manifest,
    pub spec: GenerativeSpec,
}

impl SyntheticData {
    pub fn new(spec: GenerativeSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let records = generate(&spec).unwrap();
        let (manifest, _) = export_manifest(&records, dir.path(), ExportMode::Flat, Provenance::default()).unwrap();
        SyntheticData {
            dir,
            records,
            manifest,
            spec,
        }
    }

    pub fn store(&self) -> FeatureStore {
        FeatureStore::new(self.dir.path(), FeatureMode::Flat, 32)
    }

    pub fn observations(&self) -> Array2<f64> {
        let d = self.records[0].x.len();
        Array2::from_shape_fn((self.records.len(), d), |(i, j)| self.records[i].x[j])
    }

    pub fn domains(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.u.0).collect()
    }
}

/// Domain-probe accuracies averaged over the tasks of one run.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProbeScores {
    pub z1: f64,
    pub z3: f64,
    pub true_z1: f64,
    pub true_z3: f64,
}

pub struct BenchmarkRun {
    pub seed: u64,
    pub report: LocoReport,
    pub probes: ProbeScores,
    pub elapsed: Duration,
}

impl BenchmarkRun {
    pub fn gap(&self) -> f64 {
        self.report.average(Method::Ours).unwrap_or(f64::NAN) - self.report.average(Method::SourceOnly).unwrap()
    }
}

/// First half of the records trains the probe, second half scores it.
pub fn domain_probe(z: &Array2<f64>, domains: &[usize], m: usize) -> f64 {
    let h = z.nrows() / 2;
    linear_probe_accuracy(
        z.slice(s![..h, ..]),
        &domains[..h],
        z.slice(s![h.., ..]),
        &domains[h..],
        m,
        ProbeOptions::default(),
    )
    .unwrap()
}

/// Leave-one-camera-out for both methods, with domain probes on every
/// trained model of the full method.
pub fn run_benchmark(spec: GenerativeSpec, cfg: &ExperimentConfig) -> BenchmarkRun {
    let start = Instant::now();
    let data = SyntheticData::new(spec);
    let x = data.observations();
    let u = data.domains();
    let m = data.spec.num_domains;
    let mut learned = Vec::new();
    let mut store = data.store();
    let report = run_loco_suite::<f64>(&data.manifest, &mut store, cfg, &[Method::SourceOnly, Method::Ours], |o| {
        if o.method == Method::Ours {
            let enc = o.state.net.encode(x.view(), None)?;
            learned.push((
                domain_probe(&enc.mu_part(Subspace::Style).to_owned(), &u, m),
                domain_probe(&enc.mu_part(Subspace::Identity).to_owned(), &u, m),
            ));
        }
        Ok(())
    })
    .unwrap();
    let latent = |f: fn(&GroundTruthRecord) -> &Vec<f64>| {
        let d = f(&data.records[0]).len();
        Array2::from_shape_fn((data.records.len(), d), |(i, j)| f(&data.records[i])[j])
    };
    let n = learned.len().max(1) as f64;
    let probes = ProbeScores {
        z1: learned.iter().map(|p| p.0).sum::<f64>() / n,
        z3: learned.iter().map(|p| p.1).sum::<f64>() / n,
        true_z1: domain_probe(&latent(|r| &r.z1), &u, m),
        true_z3: domain_probe(&latent(|r| &r.z3), &u, m),
    };
    BenchmarkRun {
        seed: cfg.seed,
        report,
        probes,
        elapsed: start.elapsed(),
    }
}
