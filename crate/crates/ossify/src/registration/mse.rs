//! Bone-masked mean squared error.

use crate::error::Result;
use crate::volume::{check_same_grid, ScalarVolume};

/// Mean squared intensity difference over the voxels that exceed the bone
/// threshold in *both* volumes.
///
/// Returns `(loss, mask_size)`.  An empty mask yields `(0.0, 0)` — two
/// volumes with no common bone are vacuously in agreement, and callers that
/// need to distinguish that case get it from the count.
///
/// The sum is accumulated in f64 over voxels in ascending linear (x-fastest)
/// index order, so the result is a pure function of the inputs down to the
/// last bit.
pub fn masked_mse(
    fixed: &ScalarVolume,
    warped_moving: &ScalarVolume,
    threshold_hu: f64,
) -> Result<(f64, usize)> {
    check_same_grid(
        "masked_mse",
        fixed.dims,
        fixed.spacing_mm,
        warped_moving.dims,
        warped_moving.spacing_mm,
    )?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (&f, &w) in fixed.data().iter().zip(warped_moving.data()) {
        if w as f64 > threshold_hu && f as f64 > threshold_hu {
            let d = w as f64 - f as f64;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, 0));
    }
    Ok((sum / count as f64, count))
}
