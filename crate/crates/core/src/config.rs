//! Experiment configuration, latent partition and validation.
//!
//! The on-disk form is TOML. Every table rejects unknown keys and every field
//! has a default, so a partial file overrides only what it names:
//!
//! ```toml
//! seed = 7
//! target_camera = 3
//!
//! [latent]
//! d1 = 2
//! d2 = 64
//! d3 = 256
//! d4 = 10
//! d3_by_target = { "3" = 192 }
//!
//! [loss]
//! lambda_dis = 1.0
//! lambda_align = 0.1
//!
//! [optimizer]
//! lr = 0.001
//! epochs = 40
//!
//! [data]
//! manifest = "manifest.csv"
//! ```

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::CameraId;

/// Dimensions of the four latent subspaces, sliced contiguously in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPartition {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d4: usize,
}

/// Names the four subspaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subspace {
    /// Imaging style.
    Style,
    /// View-dependent biometrics.
    View,
    /// Intrinsic identity topology.
    Identity,
    /// Universal appearance.
    Shared,
}

impl LatentPartition {
    pub fn new(d1: usize, d2: usize, d3: usize, d4: usize) -> Result<Self> {
        let p = LatentPartition { d1, d2, d3, d4 };
        if [d1, d2, d3, d4].contains(&0) {
            return Err(Error::InvalidConfig(vec!["latent dims must be positive".into()]));
        }
        Ok(p)
    }

    pub fn total(&self) -> usize {
        self.d1 + self.d2 + self.d3 + self.d4
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.d1, self.d2, self.d3, self.d4]
    }

    pub fn range(&self, s: Subspace) -> Range<usize> {
        let a = self.d1;
        let b = a + self.d2;
        let c = b + self.d3;
        match s {
            Subspace::Style => 0..a,
            Subspace::View => a..b,
            Subspace::Identity => b..c,
            Subspace::Shared => c..self.total(),
        }
    }

    /// Splits a latent vector into `(z1, z2, z3, z4)`.
    pub fn split<'a, T>(&self, z: &'a [T]) -> Result<[&'a [T]; 4]> {
        if z.len() != self.total() {
            return Err(Error::dim("latent split", self.total(), z.len()));
        }
        let (z1, rest) = z.split_at(self.d1);
        let (z2, rest) = rest.split_at(self.d2);
        let (z3, z4) = rest.split_at(self.d3);
        Ok([z1, z2, z3, z4])
    }

    pub fn concat<T: Clone>(&self, parts: [&[T]; 4]) -> Result<Vec<T>> {
        for (p, d) in parts.iter().zip(self.dims()) {
            if p.len() != d {
                return Err(Error::dim("latent concat", d, p.len()));
            }
        }
        Ok(parts.concat())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub d4: usize,
    /// Per-target z3 dimension, keyed by target camera index.
    pub d3_by_target: BTreeMap<String, usize>,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            d1: 2,
            d2: 64,
            d3: 256,
            d4: 10,
            d3_by_target: BTreeMap::from([("3".to_string(), 192)]),
        }
    }
}

impl LatentConfig {
    /// Partition used when `target` is the held-out camera.
    pub fn partition_for(&self, target: CameraId) -> LatentPartition {
        let d3 = self
            .d3_by_target
            .get(&target.0.to_string())
            .copied()
            .unwrap_or(self.d3);
        LatentPartition {
            d1: self.d1,
            d2: self.d2,
            d3,
            d4: self.d4,
        }
    }
}

/// Handling of confusion-matrix rows whose raw mass is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroRowPolicy {
    #[default]
    Uniform,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_dis: f64,
    pub lambda_align: f64,
    /// Weight of the confusion term inside the identity objective.
    pub lambda_mcc: f64,
    pub beta: f64,
    /// Final KL capacity, in nats.
    pub capacity_max: f64,
    /// Epochs over which capacity ramps from 0; `None` means half of the run.
    pub capacity_ramp_epochs: Option<usize>,
    pub temperature: f64,
    pub eps: f64,
    /// EMA momentum of the centroid banks.
    pub gamma: f64,
    pub zero_rows: ZeroRowPolicy,
    /// Minimum softmax confidence for a target pseudo-label; 0 accepts all.
    pub pseudo_label_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_dis: 1.0,
            lambda_align: 0.1,
            lambda_mcc: 1.0,
            beta: 1.0,
            capacity_max: 25.0,
            capacity_ramp_epochs: None,
            temperature: 2.5,
            eps: 1e-5,
            gamma: 0.9,
            zero_rows: ZeroRowPolicy::Uniform,
            pseudo_label_threshold: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbseConfig {
    /// Fraction of each source camera held out for the confusion estimate.
    pub holdout_fraction: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Condition number above which the estimate falls back to all-ones.
    pub max_condition: f64,
}

impl Default for BbseConfig {
    fn default() -> Self {
        BbseConfig {
            holdout_fraction: 0.1,
            alpha_min: 0.1,
            alpha_max: 10.0,
            max_condition: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Samples reference stored feature vectors; the backbone is the identity.
    #[default]
    Flat,
    /// Samples reference image files; a fixed downsampling backbone is used.
    Pixel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of encoder and decoder; `None` means `max(512, 2 * total)`.
    pub hidden_width: Option<usize>,
    pub encoder_layers: usize,
    /// Hidden width of the camera predictor and classifier heads; 0 makes them linear.
    pub head_width: usize,
    /// Reparameterized sampling during training; off means `z = mu` everywhere.
    pub latent_sampling: bool,
    pub freeze_backbone: bool,
    pub feature_mode: FeatureMode,
    /// Side length of the square grayscale grid in pixel mode.
    pub pixel_side: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_width: None,
            encoder_layers: 2,
            head_width: 256,
            latent_sampling: true,
            freeze_backbone: true,
            feature_mode: FeatureMode::Flat,
            pixel_side: 32,
        }
    }
}

impl ModelConfig {
    pub fn resolved_hidden_width(&self, latent_total: usize) -> usize {
        self.hidden_width
            .unwrap_or_else(|| 512.max(2 * latent_total))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationConfig {
    pub dice_threshold: f64,
    /// Trajectories shorter than this are listed for manual review.
    pub min_trajectory_len: usize,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            dice_threshold: 0.8,
            min_trajectory_len: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Manifest path, relative to the config file when not absolute.
    pub manifest: Option<PathBuf>,
    /// Train on a single source camera (the literal one-source reading of the protocol).
    pub single_source: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub target_camera: usize,
    pub latent: LatentConfig,
    pub loss: LossConfig,
    pub bbse: BbseConfig,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub association: AssociationConfig,
    pub data: DataConfig,
    /// Steps between metric records; epoch-level records are always written.
    pub log_interval: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            target_camera: 0,
            latent: LatentConfig::default(),
            loss: LossConfig::default(),
            bbse: BbseConfig::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            association: AssociationConfig::default(),
            data: DataConfig::default(),
            log_interval: 10,
        }
    }
}

impl ExperimentConfig {
    /// Reduced dimensions and a shorter schedule for synthetic desk runs.
    ///
    /// At this scale the full-size loss weights let the reconstruction and
    /// alignment terms swamp the classifier, so they are cut back, the heads
    /// are linear, and the α clip is widened to let BBSE follow strong label
    /// shift.
    pub fn desk_profile() -> Self {
        ExperimentConfig {
            latent: LatentConfig {
                d1: 2,
                d2: 8,
                d3: 16,
                d4: 4,
                d3_by_target: BTreeMap::new(),
            },
            optimizer: OptimizerConfig {
                lr: 0.005,
                epochs: 10,
                ..OptimizerConfig::default()
            },
            model: ModelConfig {
                hidden_width: Some(64),
                head_width: 0,
                ..ModelConfig::default()
            },
            loss: LossConfig {
                lambda_dis: 0.01,
                lambda_align: 0.01,
                lambda_mcc: 0.3,
                capacity_max: 100.0,
                ..LossConfig::default()
            },
            bbse: BbseConfig {
                alpha_min: 0.01,
                alpha_max: 100.0,
                ..BbseConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn target(&self) -> CameraId {
        CameraId(self.target_camera)
    }

    pub fn partition(&self) -> LatentPartition {
        self.latent.partition_for(self.target())
    }

    pub fn capacity_ramp_epochs(&self) -> usize {
        self.loss
            .capacity_ramp_epochs
            .unwrap_or_else(|| self.optimizer.epochs.div_ceil(2))
    }

    /// KL capacity for a given epoch: linear from 0 to `capacity_max`, then flat.
    pub fn capacity_at(&self, epoch: usize) -> f64 {
        let ramp = self.capacity_ramp_epochs();
        if ramp == 0 {
            return self.loss.capacity_max;
        }
        self.loss.capacity_max * (epoch.min(ramp) as f64 / ramp as f64)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Loads, validates and resolves `data.manifest` against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = validate_config(Self::from_toml_str(&text)?)?;
        if let Some(m) = cfg.data.manifest.as_mut() {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(&*m);
                }
            }
        }
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Hash over the fields that shape model parameters; used by checkpoints.
    pub fn model_hash(&self, num_cameras: usize, num_classes: usize, feature_dim: usize) -> String {
        #[derive(Serialize)]
        struct Shape<'a> {
            partition: LatentPartition,
            model: &'a ModelConfig,
            num_cameras: usize,
            num_classes: usize,
            feature_dim: usize,
        }
        let json = serde_json::to_vec(&Shape {
            partition: self.partition(),
            model: &self.model,
            num_cameras,
            num_classes,
            feature_dim,
        })
        .expect("shape serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Checks every field range and reports all violations together.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut errs = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            errs.push(msg);
        }
    };
    let l = &cfg.latent;
    let overrides_ok = l.d3_by_target.values().all(|&d| d > 0);
    check(
        l.d1 > 0 && l.d2 > 0 && l.d3 > 0 && l.d4 > 0 && overrides_ok,
        "latent dims must be positive".into(),
    );
    for key in l.d3_by_target.keys() {
        check(
            key.parse::<usize>().is_ok(),
            format!("latent.d3_by_target key {key:?} is not a camera index"),
        );
    }
    let nonneg = |v: f64| v.is_finite() && v >= 0.0;
    let s = &cfg.loss;
    check(nonneg(s.lambda_dis), format!("lambda_dis must be >= 0, got {}", s.lambda_dis));
    check(nonneg(s.lambda_align), format!("lambda_align must be >= 0, got {}", s.lambda_align));
    check(nonneg(s.lambda_mcc), format!("lambda_mcc must be >= 0, got {}", s.lambda_mcc));
    check(nonneg(s.beta), format!("beta must be >= 0, got {}", s.beta));
    check(nonneg(s.capacity_max), format!("capacity_max must be >= 0, got {}", s.capacity_max));
    check(
        s.temperature.is_finite() && s.temperature > 0.0,
        format!("temperature must be > 0, got {}", s.temperature),
    );
    check(s.eps.is_finite() && s.eps > 0.0, format!("eps must be > 0, got {}", s.eps));
    check(
        (0.0..=1.0).contains(&s.gamma),
        format!("gamma not in [0,1], got {}", s.gamma),
    );
    check(
        (0.0..1.0).contains(&s.pseudo_label_threshold),
        format!("pseudo_label_threshold not in [0,1), got {}", s.pseudo_label_threshold),
    );
    let b = &cfg.bbse;
    check(
        b.holdout_fraction > 0.0 && b.holdout_fraction < 1.0,
        format!("bbse.holdout_fraction not in (0,1), got {}", b.holdout_fraction),
    );
    check(
        b.alpha_min > 0.0 && b.alpha_min <= b.alpha_max && b.alpha_max.is_finite(),
        format!("bbse alpha clip range [{}, {}] is invalid", b.alpha_min, b.alpha_max),
    );
    check(b.max_condition > 1.0, format!("bbse.max_condition must be > 1, got {}", b.max_condition));
    let o = &cfg.optimizer;
    check(o.lr.is_finite() && o.lr > 0.0, format!("lr must be > 0, got {}", o.lr));
    check(
        (0.0..1.0).contains(&o.momentum),
        format!("momentum not in [0,1), got {}", o.momentum),
    );
    check(nonneg(o.weight_decay), format!("weight_decay must be >= 0, got {}", o.weight_decay));
    check(o.batch_size > 0, "batch_size must be positive".into());
    check(o.epochs > 0, "epochs must be positive".into());
    let m = &cfg.model;
    check(m.hidden_width != Some(0), "hidden_width must be positive".into());
    check(m.pixel_side > 0, "pixel_side must be positive".into());
    let a = &cfg.association;
    check(
        a.dice_threshold > 0.0 && a.dice_threshold <= 1.0,
        format!("dice_threshold not in (0,1], got {}", a.dice_threshold),
    );
    check(cfg.log_interval > 0, "log_interval must be positive".into());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(errs))
    }
}
