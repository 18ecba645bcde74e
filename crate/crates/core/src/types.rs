//! Shared domain types: camera and identity indices, samples, boxes, class weights.

use std::fmt;

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 0-based camera node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CameraId(pub usize);

/// Dense 0-based individual identity index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Identity(pub usize);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "camera#{}", self.0)
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "identity#{}", self.0)
    }
}

/// Axis-aligned detection box in pixel units.
///
/// Generic over the coordinate type so overlap arithmetic can run on exact
/// rationals as well as floats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox<T = f64> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Num + PartialOrd + Copy> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Checks `x_min < x_max` and `y_min < y_max`; NaN coordinates fail both.
    pub fn validate(&self) -> Result<()> {
        if self.x_min < self.x_max && self.y_min < self.y_max {
            Ok(())
        } else {
            Err(Error::Degenerate("bounding box has zero or negative area".into()))
        }
    }

    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let lo_x = max_of(self.x_min, other.x_min);
        let hi_x = min_of(self.x_max, other.x_max);
        let lo_y = max_of(self.y_min, other.y_min);
        let hi_y = min_of(self.y_max, other.y_max);
        if lo_x < hi_x && lo_y < hi_y {
            (hi_x - lo_x) * (hi_y - lo_y)
        } else {
            T::zero()
        }
    }
}

fn max_of<T: PartialOrd>(a: T, b: T) -> T {
    if a >= b {
        a
    } else {
        b
    }
}

fn min_of<T: PartialOrd>(a: T, b: T) -> T {
    if a <= b {
        a
    } else {
        b
    }
}

/// One image (or feature vector) reference with its acquisition metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_ref: String,
    pub camera: CameraId,
    pub label: Option<Identity>,
    pub bbox: Option<BoundingBox<f64>>,
    pub frame_index: Option<u64>,
}

/// A sample as exposed to training code on the target camera: the label field
/// does not exist.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSample {
    pub image_ref: String,
    pub camera: CameraId,
    pub bbox: Option<BoundingBox<f64>>,
    pub frame_index: Option<u64>,
}

impl From<&Sample> for UnlabeledSample {
    fn from(s: &Sample) -> Self {
        UnlabeledSample {
            image_ref: s.image_ref.clone(),
            camera: s.camera,
            bbox: s.bbox,
            frame_index: s.frame_index,
        }
    }
}

/// Per-class importance weights for one source camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightVector<S> {
    alpha: Vec<S>,
}

impl<S: Scalar> ClassWeightVector<S> {
    pub fn ones(num_classes: usize) -> Self {
        ClassWeightVector {
            alpha: vec![S::one(); num_classes],
        }
    }

    pub fn new(alpha: Vec<S>) -> Result<Self> {
        if let Some(bad) = alpha.iter().find(|a| !a.is_finite() || **a < S::zero()) {
            return Err(Error::Invalid(format!(
                "class weights must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(ClassWeightVector { alpha })
    }

    pub fn as_slice(&self) -> &[S] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn get(&self, class: Identity) -> S {
        self.alpha[class.0]
    }

    pub fn scaled(&self, c: S) -> Self {
        ClassWeightVector {
            alpha: self.alpha.iter().map(|&a| a * c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_area_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BoundingBox::new(0, 0, 2, 1).is_ok());
    }

    #[test]
    fn intersection_of_touching_boxes_is_empty() {
        let a = BoundingBox::new(0, 0, 1, 1).unwrap();
        let b = BoundingBox::new(1, 0, 2, 1).unwrap();
        assert_eq!(a.intersection_area(&b), 0);
    }

    #[test]
    fn class_weights_reject_negative_and_nan() {
        assert!(ClassWeightVector::new(vec![1.0, -0.1]).is_err());
        assert!(ClassWeightVector::new(vec![1.0, f64::NAN]).is_err());
        let w = ClassWeightVector::<f64>::ones(3);
        assert_eq!(w.as_slice(), &[1.0, 1.0, 1.0]);
    }
}
