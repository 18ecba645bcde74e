//! Delimited-text dataset manifests.
//!
//! One record per line under the header
//! `image_path,camera,identity,frame,x_min,y_min,x_max,y_max`. `identity`,
//! `frame` and the four box columns may be empty. Leading `# key=value` lines
//! carry provenance. Camera and identity columns hold names; loading assigns
//! dense indices in natural sort order (`C2` before `C10`).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, CameraId, Identity, Sample};

pub const MANIFEST_HEADER: [&str; 8] = [
    "image_path", "camera", "identity", "frame", "x_min", "y_min", "x_max", "y_max",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub created: Option<String>,
    pub notes: Vec<String>,
}

impl Provenance {
    fn comment_lines(&self) -> Vec<String> {
        let mut out: Vec<String> = self.sources.iter().map(|s| format!("# source={s}")).collect();
        if let Some(c) = &self.created {
            out.push(format!("# created={c}"));
        }
        out.extend(self.notes.iter().map(|n| format!("# {n}")));
        out
    }

    fn absorb(&mut self, comment: &str) {
        let body = comment.trim_start_matches('#').trim();
        if let Some(s) = body.strip_prefix("source=") {
            self.sources.push(s.to_string());
        } else if let Some(c) = body.strip_prefix("created=") {
            self.created = Some(c.to_string());
        } else if !body.is_empty() {
            self.notes.push(body.to_string());
        }
    }
}

/// String names behind the dense camera and identity indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub cameras: Vec<String>,
    pub identities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<Sample>,
    pub index: IndexMaps,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ManifestRow {
    pub image_path: String,
    pub camera: String,
    pub identity: Option<String>,
    pub frame: Option<u64>,
    pub x_min: Option<f64>,
    pub y_min: Option<f64>,
    pub x_max: Option<f64>,
    pub y_max: Option<f64>,
}

impl ManifestRow {
    fn bbox(&self) -> Result<Option<BoundingBox<f64>>> {
        match (self.x_min, self.y_min, self.x_max, self.y_max) {
            (Some(a), Some(b), Some(c), Some(d)) => Ok(Some(BoundingBox::new(a, b, c, d)?)),
            (None, None, None, None) => Ok(None),
            _ => Err(Error::Manifest(format!(
                "{}: box columns must be all present or all empty",
                self.image_path
            ))),
        }
    }

    pub(crate) fn from_sample(s: &Sample, index: &IndexMaps) -> Self {
        ManifestRow {
            image_path: s.image_ref.clone(),
            camera: index.cameras[s.camera.0].clone(),
            identity: s.label.map(|l| index.identities[l.0].clone()),
            frame: s.frame_index,
            x_min: s.bbox.map(|b| b.x_min),
            y_min: s.bbox.map(|b| b.y_min),
            x_max: s.bbox.map(|b| b.x_max),
            y_max: s.bbox.map(|b| b.y_max),
        }
    }
}

/// Orders names by alternating text and integer chunks.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(cb.iter()) {
        let ord = match (x, y) {
            ((true, dx), (true, dy)) => {
                let tx = dx.trim_start_matches('0');
                let ty = dy.trim_start_matches('0');
                tx.len().cmp(&ty.len()).then(tx.cmp(ty)).then(dx.len().cmp(&dy.len()))
            }
            ((_, sx), (_, sy)) => sx.cmp(sy),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then(a.cmp(b))
}

fn sorted_names(names: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().collect();
    v.sort_by(|a, b| natural_cmp(a, b));
    v
}

/// Reads leading `#` lines, returning them and the remaining CSV text.
fn split_comments(reader: impl Read) -> Result<(Vec<String>, String)> {
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut in_header = true;
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if in_header && line.starts_with('#') {
            comments.push(line);
            continue;
        }
        in_header = false;
        body.push_str(&line);
        body.push('\n');
    }
    Ok((comments, body))
}

pub(crate) fn read_rows<R: for<'de> Deserialize<'de>>(
    reader: impl Read,
) -> Result<(Vec<String>, Vec<R>)> {
    let (comments, body) = split_comments(reader)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    Ok((comments, rows))
}

pub(crate) fn write_rows<R: Serialize>(
    path: &Path,
    comments: &[String],
    header: &[&str],
    rows: &[R],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    for c in comments {
        writeln!(buf, "{c}").map_err(|e| Error::io(path, e))?;
    }
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

impl Manifest {
    /// Builds a manifest from already-indexed samples and checks its invariants.
    pub fn new(entries: Vec<Sample>, index: IndexMaps, provenance: Provenance) -> Result<Self> {
        let m = Manifest {
            entries,
            index,
            provenance,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_cameras(&self) -> usize {
        self.index.cameras.len()
    }

    pub fn num_identities(&self) -> usize {
        self.index.identities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = (self.num_cameras(), self.num_identities());
        let mut per_camera = vec![0usize; m];
        for e in &self.entries {
            if e.camera.0 >= m {
                return Err(Error::Manifest(format!(
                    "{}: camera index {} out of range (M = {m})",
                    e.image_ref, e.camera.0
                )));
            }
            if let Some(l) = e.label {
                if l.0 >= k {
                    return Err(Error::Manifest(format!(
                        "{}: identity index {} out of range (K = {k})",
                        e.image_ref, l.0
                    )));
                }
            }
            if let Some(b) = &e.bbox {
                b.validate()?;
            }
            per_camera[e.camera.0] += 1;
        }
        if let Some(c) = per_camera.iter().position(|&n| n == 0) {
            return Err(Error::Manifest(format!(
                "camera {:?} has no entries",
                self.index.cameras[c]
            )));
        }
        Ok(())
    }

    pub fn camera_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_cameras()];
        for e in &self.entries {
            counts[e.camera.0] += 1;
        }
        counts
    }

    pub fn camera_index(&self, name: &str) -> Option<CameraId> {
        self.index.cameras.iter().position(|c| c == name).map(CameraId)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let (comments, rows): (_, Vec<ManifestRow>) = read_rows(reader)?;
        let mut provenance = Provenance::default();
        for c in &comments {
            provenance.absorb(c);
        }
        Self::from_rows(rows, provenance)
    }

    pub(crate) fn from_rows(rows: Vec<ManifestRow>, provenance: Provenance) -> Result<Self> {
        let cameras = sorted_names(rows.iter().map(|r| r.camera.clone()).collect());
        let identities = sorted_names(
            rows.iter()
                .filter_map(|r| r.identity.clone().filter(|s| !s.is_empty()))
                .collect(),
        );
        let cam_idx: BTreeMap<&str, usize> =
            cameras.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let id_idx: BTreeMap<&str, usize> =
            identities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut entries = Vec::with_capacity(rows.len());
        for r in &rows {
            if r.camera.is_empty() {
                return Err(Error::Manifest(format!("{}: empty camera", r.image_path)));
            }
            entries.push(Sample {
                image_ref: r.image_path.clone(),
                camera: CameraId(cam_idx[r.camera.as_str()]),
                label: r
                    .identity
                    .as_deref()
                    .filter(|s| !s.is_empty())
                    .map(|s| Identity(id_idx[s])),
                bbox: r.bbox()?,
                frame_index: r.frame,
            });
        }
        Manifest::new(
            entries,
            IndexMaps {
                cameras,
                identities,
            },
            provenance,
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_reader(f)?;
        if m.provenance.sources.is_empty() {
            m.provenance.sources.push(path.display().to_string());
        }
        Ok(m)
    }

    pub(crate) fn rows(&self) -> Vec<ManifestRow> {
        self.entries
            .iter()
            .map(|s| ManifestRow::from_sample(s, &self.index))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.provenance.comment_lines(), &MANIFEST_HEADER, &self.rows())
    }

    pub fn write_index_maps(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.index)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
