//! Grid resampling to a new voxel spacing.

use crate::error::{Error, Result};
use crate::interp::{sample_nearest_u16, sample_trilinear, LabelOob, ScalarOob};
use crate::volume::{LabelVolume, ScalarVolume};
use rayon::prelude::*;

/// Interpolation used when sampling a volume off-grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Trilinear,
    Nearest,
}

fn output_dims(in_dims: [usize; 3], in_sp: [f64; 3], target: [f64; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| {
        let extent = in_dims[a] as f64 * in_sp[a];
        ((extent / target[a]).round() as usize).max(1)
    })
}

fn validate_target(target: [f64; 3]) -> Result<()> {
    if target.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be finite and positive, got {target:?}"
        )));
    }
    Ok(())
}

/// Per-axis ratio mapping an output index to an input index.  When the
/// spacings are identical the ratio is exactly 1.0, so output coordinates
/// are exact integers and sampling reproduces the input bit for bit.
fn index_ratio(in_sp: [f64; 3], target: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| target[a] / in_sp[a])
}

/// Resample a scalar volume onto a grid with the given spacing.
///
/// The output covers the same physical extent: its dims are
/// `round(in_dims·in_spacing/target)`, at least 1 per axis.  Sampling
/// positions outside the input's voxel-center span clamp to the border.
pub fn resample_scalar(
    vol: &ScalarVolume,
    target_spacing_mm: [f64; 3],
    mode: SampleMode,
) -> Result<ScalarVolume> {
    validate_target(target_spacing_mm)?;
    let out_dims = output_dims(vol.dims, vol.spacing_mm, target_spacing_mm);
    let ratio = index_ratio(vol.spacing_mm, target_spacing_mm);
    let (data, dims) = (vol.data(), vol.dims);

    let mut out = vec![0.0f32; out_dims[0] * out_dims[1] * out_dims[2]];
    out.par_chunks_mut(out_dims[0] * out_dims[1])
        .enumerate()
        .for_each(|(z, slice)| {
            let pz = z as f64 * ratio[2];
            for y in 0..out_dims[1] {
                let py = y as f64 * ratio[1];
                for x in 0..out_dims[0] {
                    let p = [x as f64 * ratio[0], py, pz];
                    let v = match mode {
                        SampleMode::Trilinear => sample_trilinear(data, dims, p, ScalarOob::Clamp),
                        SampleMode::Nearest => {
                            // Nearest on scalars reuses the label sampler's
                            // rounding rule via direct index computation.
                            let idx = [0, 1, 2].map(|a| {
                                ((p[a].clamp(0.0, (dims[a] - 1) as f64) + 0.5).floor() as usize)
                                    .min(dims[a] - 1)
                            });
                            data[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])] as f64
                        }
                    };
                    slice[x + out_dims[0] * y] = v as f32;
                }
            }
        });
    ScalarVolume::new(out_dims, target_spacing_mm, out)
}

/// Resample a label volume onto a grid with the given spacing.
/// Only nearest-neighbour sampling is meaningful for labels; trilinear is
/// rejected rather than silently blending class ids.
pub fn resample_labels(
    vol: &LabelVolume,
    target_spacing_mm: [f64; 3],
    mode: SampleMode,
) -> Result<LabelVolume> {
    if mode == SampleMode::Trilinear {
        return Err(Error::InvalidArgument(
            "trilinear interpolation of label volumes is not defined; use nearest".into(),
        ));
    }
    validate_target(target_spacing_mm)?;
    let out_dims = output_dims(vol.dims, vol.spacing_mm, target_spacing_mm);
    let ratio = index_ratio(vol.spacing_mm, target_spacing_mm);
    let (data, dims) = (vol.data(), vol.dims);

    let mut out = vec![0u16; out_dims[0] * out_dims[1] * out_dims[2]];
    out.par_chunks_mut(out_dims[0] * out_dims[1])
        .enumerate()
        .for_each(|(z, slice)| {
            let pz = z as f64 * ratio[2];
            for y in 0..out_dims[1] {
                let py = y as f64 * ratio[1];
                for x in 0..out_dims[0] {
                    let p = [x as f64 * ratio[0], py, pz];
                    slice[x + out_dims[0] * y] =
                        sample_nearest_u16(data, dims, p, LabelOob::Clamp);
                }
            }
        });
    LabelVolume::new(out_dims, target_spacing_mm, vol.num_classes, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spacing_is_bitwise_identity() {
        let data: Vec<f32> = (0..60).map(|i| (i as f32) * 0.37 - 11.0).collect();
        let v = ScalarVolume::new([3, 4, 5], [0.1, 2.0, 0.7], data).unwrap();
        let r = resample_scalar(&v, v.spacing_mm, SampleMode::Trilinear).unwrap();
        assert_eq!(r.dims, v.dims);
        for (a, b) in r.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ramp_downsample_picks_every_other_voxel() {
        // 1-D ramp 0,1,2,3 at 1 mm; at 2 mm the output voxel centers sit at
        // 0 mm and 2 mm, i.e. exactly on input voxels 0 and 2.
        let v = ScalarVolume::new([4, 1, 1], [1.0; 3], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let r = resample_scalar(&v, [2.0, 1.0, 1.0], SampleMode::Trilinear).unwrap();
        assert_eq!(r.dims, [2, 1, 1]);
        assert_eq!(r.data(), &[0.0, 2.0]);
    }

    #[test]
    fn constant_volume_stays_constant_under_any_spacing() {
        let v = ScalarVolume::filled([4, 4, 4], [1.0; 3], 7.0).unwrap();
        let r = resample_scalar(&v, [2.0; 3], SampleMode::Trilinear).unwrap();
        assert_eq!(r.dims, [2, 2, 2]);
        assert!(r.data().iter().all(|&x| x == 7.0));
    }

    #[test]
    fn matches_brute_force_resampler() {
        // Independent oracle: recompute dims and sample positions from
        // scratch and evaluate the input with the plain eight-corner formula.
        let dims = [5, 4, 3];
        let data: Vec<f32> = (0..60).map(|i| ((i * 7919) % 113) as f32 - 50.0).collect();
        let v = ScalarVolume::new(dims, [1.5, 2.0, 2.5], data.clone()).unwrap();
        let target = [2.0, 1.5, 2.0];
        let r = resample_scalar(&v, target, SampleMode::Trilinear).unwrap();

        let want_dims =
            [0, 1, 2].map(|a| ((dims[a] as f64 * v.spacing_mm[a] / target[a]).round() as usize).max(1));
        assert_eq!(r.dims, want_dims);
        let at = |x: usize, y: usize, z: usize| data[x + dims[0] * (y + dims[1] * z)] as f64;
        for z in 0..want_dims[2] {
            for y in 0..want_dims[1] {
                for x in 0..want_dims[0] {
                    let p = [0, 1, 2].map(|a| {
                        ([x, y, z][a] as f64 * target[a] / v.spacing_mm[a])
                            .clamp(0.0, (dims[a] - 1) as f64)
                    });
                    // Clamp base so base+1 stays valid (grid has >=2 voxels per axis here).
                    let base = [0, 1, 2].map(|a| (p[a].floor() as usize).min(dims[a] - 2));
                    let f = [0, 1, 2].map(|a| p[a] - base[a] as f64);
                    let mut want = 0.0;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let w = (if dx == 0 { 1.0 - f[0] } else { f[0] })
                                    * (if dy == 0 { 1.0 - f[1] } else { f[1] })
                                    * (if dz == 0 { 1.0 - f[2] } else { f[2] });
                                want += w * at(base[0] + dx, base[1] + dy, base[2] + dz);
                            }
                        }
                    }
                    let got = r.get(x, y, z) as f64;
                    assert!(
                        (got - want).abs() <= 1e-5 * want.abs().max(1.0),
                        "at ({x},{y},{z}): got {got}, oracle {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn labels_reject_trilinear_and_resample_nearest() {
        let v = LabelVolume::new([4, 1, 1], [1.0; 3], 5, vec![0, 1, 2, 3]).unwrap();
        assert!(resample_labels(&v, [2.0; 3], SampleMode::Trilinear).is_err());
        let r = resample_labels(&v, [2.0, 1.0, 1.0], SampleMode::Nearest).unwrap();
        assert_eq!(r.dims, [2, 1, 1]);
        assert_eq!(r.data(), &[0, 2]);
    }

    #[test]
    fn single_voxel_floor_is_respected() {
        // Extreme downsampling can round a dimension to zero; it must clamp to 1.
        let v = ScalarVolume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let r = resample_scalar(&v, [100.0; 3], SampleMode::Trilinear).unwrap();
        assert_eq!(r.dims, [1, 1, 1]);
    }
}
