//! Warping volumes by dense displacement fields.
//!
//! A field `f` pulls values *from* the source volume: the output at voxel
//! `x` is the source sampled at physical position `x·spacing + f(x)`.  The
//! field and the volume must live on the same grid, and the output shares it.

use crate::error::{Error, Result};
use crate::interp::{sample_nearest_u16, sample_trilinear, LabelOob, ScalarOob};
use crate::volume::{check_same_grid, DeformationField, LabelVolume, ScalarVolume};
use rayon::prelude::*;

/// Warp a scalar volume, sampling trilinearly.  Positions that land outside
/// the source's voxel-center span produce `oob_value` (CT pipelines
/// conventionally pass air, -1024 HU).
pub fn warp_scalar(
    vol: &ScalarVolume,
    field: &DeformationField,
    oob_value: f32,
) -> Result<ScalarVolume> {
    if !oob_value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "oob_value must be finite, got {oob_value}"
        )));
    }
    check_same_grid("warp_scalar", vol.dims, vol.spacing_mm, field.dims, field.spacing_mm)?;
    let dims = vol.dims;
    let sp = vol.spacing_mm;
    let (data, fdata) = (vol.data(), field.data());

    let mut out = vec![0.0f32; data.len()];
    let slice_len = dims[0] * dims[1];
    out.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * y;
                let f = fdata[i + slice_len * z];
                // (x·s + f)/s computed as x + f/s so a zero displacement maps
                // to the exact integer coordinate.
                let p = [
                    x as f64 + f[0] as f64 / sp[0],
                    y as f64 + f[1] as f64 / sp[1],
                    z as f64 + f[2] as f64 / sp[2],
                ];
                slice[i] = sample_trilinear(data, dims, p, ScalarOob::Value(oob_value)) as f32;
            }
        }
    });
    ScalarVolume::new(dims, sp, out)
}

/// Warp a label volume, sampling nearest-neighbour.  Positions outside the
/// source map to background (0), so a warp never invents classes.
pub fn warp_labels(vol: &LabelVolume, field: &DeformationField) -> Result<LabelVolume> {
    check_same_grid("warp_labels", vol.dims, vol.spacing_mm, field.dims, field.spacing_mm)?;
    let dims = vol.dims;
    let sp = vol.spacing_mm;
    let (data, fdata) = (vol.data(), field.data());

    let mut out = vec![0u16; data.len()];
    let slice_len = dims[0] * dims[1];
    out.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * y;
                let f = fdata[i + slice_len * z];
                let p = [
                    x as f64 + f[0] as f64 / sp[0],
                    y as f64 + f[1] as f64 / sp[1],
                    z as f64 + f[2] as f64 / sp[2],
                ];
                slice[i] = sample_nearest_u16(data, dims, p, LabelOob::Zero);
            }
        }
    });
    LabelVolume::new(dims, sp, vol.num_classes, out)
}
