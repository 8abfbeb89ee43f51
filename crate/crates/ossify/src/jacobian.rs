//! Jacobian determinant maps of deformation fields.
//!
//! For a field `f` the warp is `φ(x) = x + f(x)`; its Jacobian determinant
//! `det ∂φ/∂x` measures local volume change, and a non-positive value means
//! the warp folds space at that voxel.  Derivatives of `f` are taken with
//! central differences in physical units, falling back to one-sided
//! differences on the boundary planes.

use crate::error::{Error, Result};
use crate::volume::{DeformationField, ScalarVolume};
use rayon::prelude::*;

/// Per-voxel Jacobian determinants of `x + f(x)`.
///
/// Requires at least two voxels per axis (a single plane has no derivative).
/// An identically zero field yields exactly 1.0 everywhere.
pub fn jacobian_determinants(field: &DeformationField) -> Result<ScalarVolume> {
    let dims = field.dims;
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidArgument(format!(
            "jacobian_determinants needs at least 2 voxels per axis, got {dims:?}"
        )));
    }
    let sp = field.spacing_mm;
    let data = field.data();
    let slice_len = dims[0] * dims[1];

    let mut out = vec![0.0f32; field.num_voxels()];
    out.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = [x, y, z];
                // d[i][j] = ∂f_i/∂x_j (1/mm units after dividing by spacing).
                let mut jac = [[0.0f64; 3]; 3];
                for j in 0..3 {
                    let (lo, hi, denom) = if idx[j] == 0 {
                        (0, 1, sp[j])
                    } else if idx[j] == dims[j] - 1 {
                        (dims[j] - 2, dims[j] - 1, sp[j])
                    } else {
                        (idx[j] - 1, idx[j] + 1, 2.0 * sp[j])
                    };
                    let mut a = idx;
                    let mut b = idx;
                    a[j] = lo;
                    b[j] = hi;
                    let fa = data[a[0] + dims[0] * (a[1] + dims[1] * a[2])];
                    let fb = data[b[0] + dims[0] * (b[1] + dims[1] * b[2])];
                    for i in 0..3 {
                        jac[i][j] = (fb[i] as f64 - fa[i] as f64) / denom;
                    }
                }
                for i in 0..3 {
                    jac[i][i] += 1.0;
                }
                let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
                slice[x + dims[0] * y] = det as f32;
            }
        }
    });
    ScalarVolume::new(dims, sp, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_gives_exactly_one_everywhere() {
        let f = DeformationField::zeros([4, 3, 5], [1.0, 2.0, 0.5]).unwrap();
        let j = jacobian_determinants(&f).unwrap();
        assert!(j.data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn uniform_scaling_field_gives_cubed_factor() {
        // f(x) = 0.1·x expands every axis by 1.1, so det = 1.1³ = 1.331.
        // The field is linear, so even the one-sided boundary differences
        // are exact; check the interior per the contract.
        let dims = [6, 6, 6];
        let sp = [1.0, 2.0, 1.5];
        let mut data = Vec::with_capacity(216);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push([
                        (0.1 * x as f64 * sp[0]) as f32,
                        (0.1 * y as f64 * sp[1]) as f32,
                        (0.1 * z as f64 * sp[2]) as f32,
                    ]);
                }
            }
        }
        let f = DeformationField::new(dims, sp, data).unwrap();
        let j = jacobian_determinants(&f).unwrap();
        for z in 1..dims[2] - 1 {
            for y in 1..dims[1] - 1 {
                for x in 1..dims[0] - 1 {
                    assert!(
                        (j.get(x, y, z) as f64 - 1.331).abs() < 1e-6,
                        "at ({x},{y},{z}): {}",
                        j.get(x, y, z)
                    );
                }
            }
        }
    }

    #[test]
    fn folding_field_has_non_positive_determinant() {
        // Swap the outer x-planes of a 3-plane volume: the middle voxel sees
        // ∂f_x/∂x = -2, so det = -1 there.
        let dims = [3, 3, 3];
        let sp = [1.0; 3];
        let mut data = vec![[0.0f32; 3]; 27];
        for z in 0..3 {
            for y in 0..3 {
                data[0 + 3 * (y + 3 * z)][0] = 2.0;
                data[2 + 3 * (y + 3 * z)][0] = -2.0;
            }
        }
        let f = DeformationField::new(dims, sp, data).unwrap();
        let j = jacobian_determinants(&f).unwrap();
        let min = j.data().iter().cloned().fold(f32::INFINITY, f32::min);
        assert!(min <= 0.0, "min determinant {min}");
    }

    #[test]
    fn single_plane_axis_is_rejected() {
        let f = DeformationField::zeros([1, 4, 4], [1.0; 3]).unwrap();
        assert!(jacobian_determinants(&f).is_err());
    }
}
