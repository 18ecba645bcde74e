use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::types::{CameraId, Sample, UnlabeledSample};

/// One leave-one-camera-out task.
///
/// Target labels are reachable only through [`LocoSplit::evaluation_target`];
/// the training view strips them at the type level.
#[derive(Clone, Debug)]
pub struct LocoSplit {
    pub target: CameraId,
    pub source_cameras: Vec<CameraId>,
    source: Vec<Sample>,
    target_entries: Vec<Sample>,
}

impl LocoSplit {
    /// Labeled source samples, in manifest order.
    pub fn source(&self) -> &[Sample] {
        &self.source
    }

    /// Target samples as seen by training code.
    pub fn training_target(&self) -> Vec<UnlabeledSample> {
        self.target_entries.iter().map(UnlabeledSample::from).collect()
    }

    /// Target samples with labels, for evaluation only.
    pub fn evaluation_target(&self) -> &[Sample] {
        &self.target_entries
    }
}

/// Splits a manifest into all-other-cameras sources and the `target` camera.
pub fn leave_one_camera_out(manifest: &Manifest, target: CameraId) -> Result<LocoSplit> {
    split_with_sources(manifest, target, None)
}

/// Like [`leave_one_camera_out`], but with exactly one source camera.
pub fn single_source_split(
    manifest: &Manifest,
    target: CameraId,
    source: CameraId,
) -> Result<LocoSplit> {
    if source == target {
        return Err(Error::Invalid("source camera equals target camera".into()));
    }
    split_with_sources(manifest, target, Some(source))
}

fn split_with_sources(
    manifest: &Manifest,
    target: CameraId,
    only_source: Option<CameraId>,
) -> Result<LocoSplit> {
    let m = manifest.num_cameras();
    if target.0 >= m {
        return Err(Error::Invalid(format!(
            "target camera {} out of range (M = {m})",
            target.0
        )));
    }
    if let Some(s) = only_source {
        if s.0 >= m {
            return Err(Error::Invalid(format!("source camera {} out of range (M = {m})", s.0)));
        }
    }
    let mut source = Vec::new();
    let mut target_entries = Vec::new();
    for e in &manifest.entries {
        if e.camera == target {
            target_entries.push(e.clone());
        } else if only_source.is_none_or(|s| s == e.camera) {
            if e.label.is_none() {
                return Err(Error::Manifest(format!(
                    "{}: source sample without identity label",
                    e.image_ref
                )));
            }
            source.push(e.clone());
        }
    }
    if target_entries.is_empty() {
        return Err(Error::Invalid(format!(
            "target camera {:?} has no samples",
            manifest.index.cameras[target.0]
        )));
    }
    let source_cameras = match only_source {
        Some(s) => vec![s],
        None => (0..m).filter(|&c| c != target.0).map(CameraId).collect(),
    };
    Ok(LocoSplit {
        target,
        source_cameras,
        source,
        target_entries,
    })
}
