use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingestion::LocoSplit;
use crate::model::FeatureStore;
use crate::scalar::Scalar;
use crate::types::{CameraId, Identity, Sample, UnlabeledSample};

/// Features with camera ids and identity labels.
#[derive(Clone, Debug)]
pub struct LabeledSet<S> {
    pub features: Array2<S>,
    pub cameras: Vec<CameraId>,
    pub labels: Vec<Identity>,
}

/// Features with camera ids only.
#[derive(Clone, Debug)]
pub struct UnlabeledSet<S> {
    pub features: Array2<S>,
    pub cameras: Vec<CameraId>,
}

impl<S: Scalar> LabeledSet<S> {
    pub fn from_samples(samples: &[Sample], store: &mut FeatureStore) -> Result<Self> {
        let refs: Vec<&str> = samples.iter().map(|s| s.image_ref.as_str()).collect();
        let labels = samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Invalid(format!("{}: unlabeled sample in a labeled set", s.image_ref)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledSet {
            features: store.batch(&refs)?,
            cameras: samples.iter().map(|s| s.camera).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        LabeledSet {
            features: self.features.select(Axis(0), rows),
            cameras: rows.iter().map(|&i| self.cameras[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.0).collect()
    }
}

impl<S: Scalar> UnlabeledSet<S> {
    pub fn from_samples(samples: &[UnlabeledSample], store: &mut FeatureStore) -> Result<Self> {
        let refs: Vec<&str> = samples.iter().map(|s| s.image_ref.as_str()).collect();
        Ok(UnlabeledSet {
            features: store.batch(&refs)?,
            cameras: samples.iter().map(|s| s.camera).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        UnlabeledSet {
            features: self.features.select(Axis(0), rows),
            cameras: rows.iter().map(|&i| self.cameras[i]).collect(),
        }
    }
}

/// Everything training may read for one task: labeled sources split into
/// train and holdout, and the unlabeled target.
#[derive(Clone, Debug)]
pub struct TrainData<S> {
    pub source: LabeledSet<S>,
    /// Held out per source camera for the BBSE confusion estimate.
    pub holdout: LabeledSet<S>,
    pub target: UnlabeledSet<S>,
    pub target_camera: CameraId,
    pub source_cameras: Vec<CameraId>,
    pub num_cameras: usize,
    pub num_classes: usize,
}

impl<S: Scalar> TrainData<S> {
    /// Loads features and holds out `holdout_fraction` of each source camera.
    pub fn from_split(
        split: &LocoSplit,
        store: &mut FeatureStore,
        num_cameras: usize,
        num_classes: usize,
        holdout_fraction: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let all = LabeledSet::from_samples(split.source(), store)?;
        let target = UnlabeledSet::from_samples(&split.training_target(), store)?;
        if all.is_empty() {
            return Err(Error::Invalid("no source samples".into()));
        }
        let mut train_rows = Vec::new();
        let mut holdout_rows = Vec::new();
        for &cam in &split.source_cameras {
            let mut rows: Vec<usize> = (0..all.len()).filter(|&i| all.cameras[i] == cam).collect();
            rows.shuffle(rng);
            let n_hold = if rows.len() >= 2 {
                ((rows.len() as f64 * holdout_fraction).round() as usize).clamp(1, rows.len() - 1)
            } else {
                0
            };
            holdout_rows.extend_from_slice(&rows[..n_hold]);
            train_rows.extend_from_slice(&rows[n_hold..]);
        }
        train_rows.sort_unstable();
        holdout_rows.sort_unstable();
        Ok(TrainData {
            source: all.select(&train_rows),
            holdout: all.select(&holdout_rows),
            target,
            target_camera: split.target,
            source_cameras: split.source_cameras.clone(),
            num_cameras,
            num_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.source.features.ncols()
    }

    /// Smoothed class prior of one source camera's training rows.
    pub fn source_prior(&self, camera: CameraId) -> Vec<f64> {
        let k = self.num_classes;
        let mut counts = vec![0.5; k];
        for (c, l) in self.source.cameras.iter().zip(&self.source.labels) {
            if *c == camera {
                counts[l.0] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }
}
