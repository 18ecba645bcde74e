//! Fixed feature extractors feeding the encoder.
//!
//! Flat mode is the identity on stored vectors (`table.csv#<row>` refs). Pixel
//! mode decodes an image, converts to grayscale and resamples to a square
//! side, giving `side²` features in `[0, 1]`. Neither has trainable weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::Array2;

use crate::config::FeatureMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthetic::read_flat_features;

/// Resolves sample refs relative to a base directory and caches flat tables.
#[derive(Debug)]
pub struct FeatureStore {
    base_dir: PathBuf,
    mode: FeatureMode,
    pixel_side: u32,
    tables: HashMap<PathBuf, Vec<Vec<f64>>>,
}

impl FeatureStore {
    pub fn new(base_dir: impl Into<PathBuf>, mode: FeatureMode, pixel_side: usize) -> Self {
        FeatureStore {
            base_dir: base_dir.into(),
            mode,
            pixel_side: pixel_side as u32,
            tables: HashMap::new(),
        }
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    fn flat(&mut self, r: &str) -> Result<Vec<f64>> {
        let (file, row) = r
            .rsplit_once('#')
            .ok_or_else(|| Error::Invalid(format!("flat feature ref {r:?} lacks '#<row>'")))?;
        let row: usize = row
            .parse()
            .map_err(|_| Error::Invalid(format!("flat feature ref {r:?}: bad row")))?;
        let path = self.base_dir.join(file);
        if !self.tables.contains_key(&path) {
            let t = read_flat_features(&path)?;
            self.tables.insert(path.clone(), t);
        }
        self.tables[&path]
            .get(row)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("flat feature ref {r:?}: row out of range")))
    }

    fn pixels(&self, r: &str) -> Result<Vec<f64>> {
        let path = self.base_dir.join(r);
        let img = image::open(&path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        let gray = img.to_luma32f();
        let small = image::imageops::resize(&gray, self.pixel_side, self.pixel_side, FilterType::Triangle);
        Ok(small.into_raw().into_iter().map(f64::from).collect())
    }

    pub fn feature(&mut self, r: &str) -> Result<Vec<f64>> {
        let f = match self.mode {
            FeatureMode::Flat => self.flat(r)?,
            FeatureMode::Pixel => self.pixels(r)?,
        };
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of {r:?}")));
        }
        Ok(f)
    }

    /// `B × D` features for `refs`, in order.
    pub fn batch<S: Scalar>(&mut self, refs: &[&str]) -> Result<Array2<S>> {
        let rows = refs.iter().map(|r| self.feature(r)).collect::<Result<Vec<_>>>()?;
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::dim("feature width", d, bad.len()));
        }
        Ok(Array2::from_shape_fn((rows.len(), d), |(i, j)| S::lit(rows[i][j])))
    }
}

/// One-shot form of [`FeatureStore::batch`].
pub fn extract_features<S: Scalar>(
    base_dir: &Path,
    mode: FeatureMode,
    pixel_side: usize,
    refs: &[&str],
) -> Result<Array2<S>> {
    FeatureStore::new(base_dir, mode, pixel_side).batch(refs)
}
