use num_traits::Num;

use crate::error::Result;
use crate::types::BoundingBox;

/// Dice overlap `2|A ∩ B| / (|A| + |B|)` of two boxes.
///
/// Symmetric in its arguments and exactly 1 for identical boxes. Zero-area
/// boxes are rejected.
pub fn dice_coefficient<T>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> Result<T>
where
    T: Num + PartialOrd + Copy,
{
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    let two = T::one() + T::one();
    Ok(two * inter / (a.area() + b.area()))
}
