//! Manifests, detection association and leave-one-camera-out splits.

mod associate;
mod dice;
pub mod manifest;
mod split;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use associate::{associate, Detection, Frame, Trajectory, TrajectoryMember};
pub use dice::dice_coefficient;
pub use manifest::{natural_cmp, IndexMaps, Manifest, Provenance, MANIFEST_HEADER};
pub use split::{leave_one_camera_out, single_source_split, LocoSplit};

use crate::error::{Error, Result};
use crate::types::CameraId;

/// Default adjacent-frame Dice gate.
pub const DEFAULT_DICE_THRESHOLD: f64 = 0.8;

/// Groups a detection manifest into frames per camera and associates each
/// camera independently. Output order is camera-major, then trajectory start.
pub fn associate_manifest(detections: &Manifest, threshold: f64) -> Result<Vec<Trajectory>> {
    let m = detections.num_cameras();
    let mut per_camera: Vec<Vec<Frame>> = vec![Vec::new(); m];
    for e in &detections.entries {
        let (Some(frame), Some(bbox)) = (e.frame_index, e.bbox) else {
            return Err(Error::Manifest(format!(
                "{}: detections need frame and box columns",
                e.image_ref
            )));
        };
        let frames = &mut per_camera[e.camera.0];
        let det = Detection {
            bbox,
            image_ref: e.image_ref.clone(),
        };
        match frames.last_mut() {
            Some(f) if f.index == frame => f.detections.push(det),
            _ => frames.push(Frame {
                index: frame,
                detections: vec![det],
            }),
        }
    }
    let results: Vec<Result<Vec<Trajectory>>> = per_camera
        .par_iter()
        .enumerate()
        .map(|(c, frames)| associate(CameraId(c), frames, threshold))
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    trajectory: usize,
    image_path: String,
    camera: String,
    identity: Option<String>,
    frame: u64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct ReviewRow {
    image_path: String,
    camera: String,
    identity: Option<String>,
    frame: u64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    reason: String,
}

/// Writes the trajectory file and the manual-review file.
///
/// Both files start with a `# dice_threshold=<t>` line. The review file lists
/// every member of each trajectory shorter than `min_len`.
pub fn write_association(
    trajectories: &[Trajectory],
    index: &IndexMaps,
    threshold: f64,
    min_len: usize,
    trajectories_path: &Path,
    review_path: &Path,
) -> Result<()> {
    let comments = vec![
        format!("# dice_threshold={threshold}"),
        format!("# min_trajectory_len={min_len}"),
    ];
    let mut rows = Vec::new();
    let mut review = Vec::new();
    for (t, traj) in trajectories.iter().enumerate() {
        let identity = traj.assigned_label.map(|l| index.identities[l.0].clone());
        for m in &traj.members {
            rows.push(TrajectoryRow {
                trajectory: t,
                image_path: m.image_ref.clone(),
                camera: index.cameras[traj.camera.0].clone(),
                identity: identity.clone(),
                frame: m.frame_index,
                x_min: m.bbox.x_min,
                y_min: m.bbox.y_min,
                x_max: m.bbox.x_max,
                y_max: m.bbox.y_max,
            });
            if traj.len() < min_len {
                review.push(ReviewRow {
                    image_path: m.image_ref.clone(),
                    camera: index.cameras[traj.camera.0].clone(),
                    identity: identity.clone(),
                    frame: m.frame_index,
                    x_min: m.bbox.x_min,
                    y_min: m.bbox.y_min,
                    x_max: m.bbox.x_max,
                    y_max: m.bbox.y_max,
                    reason: format!("short_trajectory:{t}:len={}<{min_len}", traj.len()),
                });
            }
        }
    }
    let mut traj_header = vec!["trajectory"];
    traj_header.extend(MANIFEST_HEADER);
    manifest::write_rows(trajectories_path, &comments, &traj_header, &rows)?;
    let mut review_header = MANIFEST_HEADER.to_vec();
    review_header.push("reason");
    manifest::write_rows(review_path, &comments, &review_header, &review)
}
