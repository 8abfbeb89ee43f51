//! Cubic B-spline transform grids.
//!
//! A grid of control-point displacement vectors defines a smooth dense field
//! through separable cubic B-spline interpolation.  Control points are laid
//! out with one point of margin before the volume: storage index `(i, j, k)`
//! sits at physical position `((i-1)·hx, (j-1)·hy, (k-1)·hz)` mm, and a grid
//! built with [`BSplineGrid::new_for_domain`] carries enough points that the
//! 4×4×4 support is complete everywhere inside the image, so the partition
//! of unity holds across the whole domain.

use crate::error::{Error, Result};
use crate::volume::DeformationField;
use rayon::prelude::*;

/// Uniform cubic B-spline basis values for in-cell fraction `t ∈ [0, 1)`.
///
/// `weights(t)[m]` multiplies the control point at physical index
/// `cell - 1 + m` where `cell = floor(position / spacing)`.
#[inline]
pub(crate) fn basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Per-axis lookup: for every voxel index along an axis, the storage index
/// of the first of its four supporting control points and their weights.
pub(crate) fn axis_table(
    dim: usize,
    spacing: f64,
    control_spacing: f64,
    control_dim: usize,
) -> Result<Vec<(usize, [f64; 4])>> {
    let mut out = Vec::with_capacity(dim);
    for v in 0..dim {
        let u = v as f64 * spacing / control_spacing;
        let cell = u.floor();
        // First supporting control point is physical index cell-1; the grid
        // stores physical index p at storage slot p+1, so the base slot is
        // exactly `cell`.
        let base = cell as usize;
        if base + 3 >= control_dim {
            return Err(Error::InvalidArgument(format!(
                "control grid ({control_dim} points at {control_spacing} mm) does not cover \
                 voxel {v} of {dim} at {spacing} mm"
            )));
        }
        out.push((base, basis(u - cell)));
    }
    Ok(out)
}

/// Free-form deformation parametrised by a coarse grid of control-point
/// displacements (millimetres, f64 for optimisation headroom).
#[derive(Debug, Clone)]
pub struct BSplineGrid {
    pub control_dims: [usize; 3],
    pub control_spacing_mm: [f64; 3],
    pub coefficients: Vec<[f64; 3]>,
}

impl BSplineGrid {
    /// Zero-displacement grid covering an image domain of `dims` voxels at
    /// `spacing_mm`, with one cubic-support margin on each side.
    pub fn new_for_domain(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        control_spacing_mm: [f64; 3],
    ) -> Result<Self> {
        if control_spacing_mm.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "control spacing must be positive, got {control_spacing_mm:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("image dims must be positive".into()));
        }
        let control_dims = [0, 1, 2].map(|a| {
            let extent = (dims[a] - 1) as f64 * spacing_mm[a];
            (extent / control_spacing_mm[a]).floor() as usize + 4
        });
        let n = control_dims[0] * control_dims[1] * control_dims[2];
        Ok(Self { control_dims, control_spacing_mm, coefficients: vec![[0.0; 3]; n] })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.control_dims[0] * (j + self.control_dims[1] * k)
    }

    /// Displacement at an arbitrary physical position.  Intended for spot
    /// checks and oracles — dense evaluation should go through [`Self::densify`].
    pub fn eval(&self, pos_mm: [f64; 3]) -> [f64; 3] {
        let mut bases = [0usize; 3];
        let mut w = [[0.0f64; 4]; 3];
        for a in 0..3 {
            let u = pos_mm[a] / self.control_spacing_mm[a];
            let max_base = self.control_dims[a] as f64 - 4.0;
            let cell = u.floor().clamp(0.0, max_base.max(0.0));
            bases[a] = cell as usize;
            w[a] = basis(u - cell);
        }
        let mut acc = [0.0f64; 3];
        for o in 0..4 {
            for n in 0..4 {
                for m in 0..4 {
                    let c = self.coefficients
                        [self.index(bases[0] + m, bases[1] + n, bases[2] + o)];
                    let weight = w[0][m] * w[1][n] * w[2][o];
                    for axis in 0..3 {
                        acc[axis] += c[axis] * weight;
                    }
                }
            }
        }
        acc
    }

    /// Evaluate the grid at every voxel center of the given image grid.
    /// Errors if the control grid does not cover that domain.
    pub fn densify(&self, dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<DeformationField> {
        let tx = axis_table(dims[0], spacing_mm[0], self.control_spacing_mm[0], self.control_dims[0])?;
        let ty = axis_table(dims[1], spacing_mm[1], self.control_spacing_mm[1], self.control_dims[1])?;
        let tz = axis_table(dims[2], spacing_mm[2], self.control_spacing_mm[2], self.control_dims[2])?;

        let slice_len = dims[0] * dims[1];
        let mut data = vec![[0.0f32; 3]; slice_len * dims[2]];
        data.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
            let (bz, wz) = tz[z];
            for y in 0..dims[1] {
                let (by, wy) = ty[y];
                for x in 0..dims[0] {
                    let (bx, wx) = tx[x];
                    let mut acc = [0.0f64; 3];
                    for o in 0..4 {
                        let wzo = wz[o];
                        for n in 0..4 {
                            let wyz = wy[n] * wzo;
                            let row = bx + self.control_dims[0] * ((by + n) + self.control_dims[1] * (bz + o));
                            for m in 0..4 {
                                let c = self.coefficients[row + m];
                                let w = wx[m] * wyz;
                                acc[0] += c[0] * w;
                                acc[1] += c[1] * w;
                                acc[2] += c[2] * w;
                            }
                        }
                    }
                    slice[x + dims[0] * y] = [acc[0] as f32, acc[1] as f32, acc[2] as f32];
                }
            }
        });
        DeformationField::new(dims, spacing_mm, data)
    }
}
