//! Consecutive-frame trajectory association by Dice overlap.

use serde::{Deserialize, Serialize};

use super::dice::dice_coefficient;
use crate::error::{Error, Result};
use crate::types::{BoundingBox, CameraId, Identity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox<f64>,
    pub image_ref: String,
}

/// All detections of one video frame, in detector order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMember {
    pub frame_index: u64,
    pub bbox: BoundingBox<f64>,
    pub image_ref: String,
}

/// A run of detections believed to show the same animal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub camera: CameraId,
    pub members: Vec<TrajectoryMember>,
    pub assigned_label: Option<Identity>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Greedily links detections of adjacent frames into trajectories.
///
/// Frames must be strictly increasing by index. Detections in frame `t + 1`
/// are matched one-to-one against trajectories that ended in frame `t`, in
/// descending Dice order with ties broken by lowest detection index, then
/// lowest trajectory index. Pairs below `threshold` never link, and a frame
/// gap (missing or empty frame) ends every open trajectory.
pub fn associate(camera: CameraId, frames: &[Frame], threshold: f64) -> Result<Vec<Trajectory>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Invalid(format!(
            "dice threshold must be in (0,1], got {threshold}"
        )));
    }
    if let Some(w) = frames.windows(2).find(|w| w[1].index <= w[0].index) {
        return Err(Error::Invalid(format!(
            "frames are not strictly increasing: {} then {}",
            w[0].index, w[1].index
        )));
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    // Trajectory indices that ended in the previous frame, by detection order there.
    let mut open: Vec<usize> = Vec::new();
    let mut prev_index: Option<u64> = None;

    for frame in frames {
        let contiguous = prev_index.is_some_and(|p| p + 1 == frame.index);
        let candidates: &[usize] = if contiguous { &open } else { &[] };

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (d, det) in frame.detections.iter().enumerate() {
            det.bbox.validate()?;
            for (slot, &t) in candidates.iter().enumerate() {
                let last = &trajectories[t].members.last().expect("nonempty").bbox;
                let score = dice_coefficient(last, &det.bbox)?;
                if score >= threshold {
                    pairs.push((score, d, slot));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut det_to_traj: Vec<Option<usize>> = vec![None; frame.detections.len()];
        let mut slot_used = vec![false; candidates.len()];
        for (_, d, slot) in pairs {
            if det_to_traj[d].is_none() && !slot_used[slot] {
                det_to_traj[d] = Some(candidates[slot]);
                slot_used[slot] = true;
            }
        }

        let mut next_open = Vec::with_capacity(frame.detections.len());
        for (d, det) in frame.detections.iter().enumerate() {
            let member = TrajectoryMember {
                frame_index: frame.index,
                bbox: det.bbox,
                image_ref: det.image_ref.clone(),
            };
            let t = match det_to_traj[d] {
                Some(t) => {
                    trajectories[t].members.push(member);
                    t
                }
                None => {
                    trajectories.push(Trajectory {
                        camera,
                        members: vec![member],
                        assigned_label: None,
                    });
                    trajectories.len() - 1
                }
            };
            next_open.push(t);
        }
        open = next_open;
        prev_index = Some(frame.index);
    }
    Ok(trajectories)
}
