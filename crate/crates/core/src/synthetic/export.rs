use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use super::GroundTruthRecord;
use crate::error::{Error, Result};
use crate::ingestion::{natural_cmp, IndexMaps, Manifest, Provenance};
use crate::types::{CameraId, Identity, Sample};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const IMAGE_DIR: &str = "images";

/// Pixel range mapped onto the 16-bit gray scale in image mode.
const TILE_RANGE: (f64, f64) = (-4.0, 4.0);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExportMode {
    /// Rows of `features.csv`, referenced as `features.csv#<row>`. Lossless.
    #[default]
    Flat,
    /// One square 16-bit grayscale PNG per record.
    Image,
}

#[derive(Clone, Debug)]
pub struct ExportPaths {
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    /// `features.csv` or the image directory.
    pub observations: PathBuf,
}

pub fn camera_name(u: CameraId) -> String {
    format!("C{}", u.0)
}

pub fn identity_name(y: Identity) -> String {
    format!("id{}", y.0)
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    // `Display` for f64 is the shortest string that parses back to the same bits
    values.into_iter().map(|v| format!("{v}")).collect()
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_tile(path: &Path, x: &[f64]) -> Result<()> {
    let side = (x.len() as f64).sqrt().ceil() as u32;
    let (lo, hi) = TILE_RANGE;
    let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(side, side);
    for (i, &v) in x.iter().enumerate() {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        img.put_pixel(i as u32 % side, i as u32 / side, Luma([(t * 65535.0).round() as u16]));
    }
    img.save(path)?;
    Ok(())
}

/// Writes observations, `manifest.csv` and the `ground_truth.csv` sidecar into `dir`.
///
/// The sidecar follows manifest line order; nothing on the training path reads it.
pub fn export_manifest(
    records: &[GroundTruthRecord],
    dir: &Path,
    mode: ExportMode,
    provenance: Provenance,
) -> Result<(Manifest, ExportPaths)> {
    let first = records
        .first()
        .ok_or_else(|| Error::Invalid("cannot export an empty record list".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let observations = match mode {
        ExportMode::Flat => {
            let path = dir.join(FEATURES_FILE);
            let header: Vec<String> = (0..first.x.len()).map(|j| format!("x{j}")).collect();
            write_csv(&path, &header, records.iter().map(|r| fmt_row(r.x.iter().copied())))?;
            path
        }
        ExportMode::Image => {
            let img_dir = dir.join(IMAGE_DIR);
            fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
            for (i, r) in records.iter().enumerate() {
                write_tile(&img_dir.join(format!("rec_{i:06}.png")), &r.x)?;
            }
            img_dir
        }
    };

    let mut cameras: Vec<String> = records.iter().map(|r| camera_name(r.u)).collect();
    let mut identities: Vec<String> = records.iter().map(|r| identity_name(r.y)).collect();
    for names in [&mut cameras, &mut identities] {
        names.sort_by(|a, b| natural_cmp(a, b));
        names.dedup();
    }
    let pos = |names: &[String], n: String| names.iter().position(|c| *c == n).expect("name indexed");
    let entries = records
        .iter()
        .enumerate()
        .map(|(i, r)| Sample {
            image_ref: match mode {
                ExportMode::Flat => format!("{FEATURES_FILE}#{i}"),
                ExportMode::Image => format!("{IMAGE_DIR}/rec_{i:06}.png"),
            },
            camera: CameraId(pos(&cameras, camera_name(r.u))),
            label: Some(Identity(pos(&identities, identity_name(r.y)))),
            bbox: None,
            frame_index: None,
        })
        .collect();
    let manifest = Manifest::new(
        entries,
        IndexMaps {
            cameras,
            identities,
        },
        provenance,
    )?;
    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.write(&manifest_path)?;

    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let mut header = vec!["u".to_string(), "y".to_string()];
    for (name, len) in [("z1", first.z1.len()), ("z2", first.z2.len()), ("z3", first.z3.len()), ("z4", first.z4.len())] {
        header.extend((0..len).map(|j| format!("{name}_{j}")));
    }
    write_csv(
        &gt_path,
        &header,
        records.iter().map(|r| {
            let mut row = vec![r.u.0.to_string(), r.y.0.to_string()];
            row.extend(fmt_row(r.z()));
            row
        }),
    )?;

    Ok((
        manifest,
        ExportPaths {
            manifest: manifest_path,
            ground_truth: gt_path,
            observations,
        },
    ))
}

/// Reads a flat feature table written by [`export_manifest`].
pub fn read_flat_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Invalid(format!("{}: {e}: {s:?}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

/// Reads the sidecar back as `(u, y, z)` rows; `x` is left empty.
pub fn read_ground_truth(path: &Path, dims: [usize; 4]) -> Result<Vec<GroundTruthRecord>> {
    let total: usize = dims.iter().sum();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != total + 2 {
            return Err(Error::dim("ground truth columns", total + 2, rec.len()));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
        };
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
        };
        let z = rec.iter().skip(2).map(parse).collect::<Result<Vec<f64>>>()?;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = z[at..at + n].to_vec();
            at += n;
            s
        };
        out.push(GroundTruthRecord {
            u: CameraId(idx(&rec[0])?),
            y: Identity(idx(&rec[1])?),
            z1: take(dims[0]),
            z2: take(dims[1]),
            z3: take(dims[2]),
            z4: take(dims[3]),
            x: Vec::new(),
        });
    }
    Ok(out)
}
