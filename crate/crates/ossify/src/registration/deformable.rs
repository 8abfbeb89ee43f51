//! Multiscale B-spline deformable registration.
//!
//! The moving volume is first resampled once onto the fixed grid through the
//! initial similarity transform; the deformable stage then runs entirely in
//! fixed space.  A coarse-to-fine pyramid (downsampling factor two per
//! level) estimates a free-form deformation increment at each level,
//! composes it onto the accumulated field, and hands the result to the next
//! finer level.  The per-level optimiser is plain gradient descent on the
//! bone-masked MSE with analytic gradients, a backtracking line search that
//! only accepts strict improvements, and a hard per-coefficient cap that
//! keeps every level's warp invertible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::{
    sample_field_trilinear, sample_trilinear, sample_trilinear_with_gradient, ScalarOob,
};
use crate::registration::bspline::{axis_table, BSplineGrid};
use crate::registration::mse::masked_mse;
use crate::registration::similarity::SimilarityTransform;
use crate::registration::RegistrationConfig;
use crate::resample::{resample_scalar, SampleMode};
use crate::volume::{check_same_grid, voxel_count, DeformationField, ScalarVolume};
use crate::warp::warp_scalar;

/// Fill value for samples pulled from outside the moving volume.
const AIR_HU: f32 = -1024.0;

/// Compose two displacement fields on the same grid.
///
/// With `warp` pulling samples through a field, applying `inner` first and
/// then `outer` is equivalent to applying the single field
/// `result(x) = inner(x) + outer(x + inner(x))` — `outer` is interpolated
/// (clamped at the border) at the position the inner field points to.  A
/// zero field on either side returns the other field bit for bit.
pub fn compose_fields(
    outer: &DeformationField,
    inner: &DeformationField,
) -> Result<DeformationField> {
    check_same_grid(
        "compose_fields",
        outer.dims,
        outer.spacing_mm,
        inner.dims,
        inner.spacing_mm,
    )?;
    let dims = outer.dims;
    let sp = outer.spacing_mm;
    let slice_len = dims[0] * dims[1];
    let mut data = vec![[0.0f32; 3]; outer.num_voxels()];
    data.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let d = inner.get(x, y, z);
                let p = [
                    x as f64 + d[0] as f64 / sp[0],
                    y as f64 + d[1] as f64 / sp[1],
                    z as f64 + d[2] as f64 / sp[2],
                ];
                let o = sample_field_trilinear(outer.data(), dims, p);
                slice[x + dims[0] * y] = [
                    (d[0] as f64 + o[0]) as f32,
                    (d[1] as f64 + o[1]) as f32,
                    (d[2] as f64 + o[2]) as f32,
                ];
            }
        }
    });
    DeformationField::new(dims, sp, data)
}

/// Trilinearly resample a displacement field onto a new grid (used to carry
/// the accumulated field from one pyramid level to the next).  Positions
/// outside the source span clamp to the border.  Displacement *values* are
/// in millimetres and transfer unchanged.
pub(crate) fn resample_field(
    field: &DeformationField,
    out_dims: [usize; 3],
    out_spacing_mm: [f64; 3],
) -> Result<DeformationField> {
    let n = voxel_count(out_dims)?;
    let ratio = [0, 1, 2].map(|a| out_spacing_mm[a] / field.spacing_mm[a]);
    if ratio.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "invalid resample spacing {out_spacing_mm:?}"
        )));
    }
    let slice_len = out_dims[0] * out_dims[1];
    let mut data = vec![[0.0f32; 3]; n];
    data.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let p = [x as f64 * ratio[0], y as f64 * ratio[1], z as f64 * ratio[2]];
                let v = sample_field_trilinear(field.data(), field.dims, p);
                slice[x + out_dims[0] * y] = [v[0] as f32, v[1] as f32, v[2] as f32];
            }
        }
    });
    DeformationField::new(out_dims, out_spacing_mm, data)
}

/// Resample `moving` onto an output grid, mapping each output position
/// through `inv` (the fixed→moving transform) before sampling.
fn resample_through(
    moving: &ScalarVolume,
    inv: &SimilarityTransform,
    out_dims: [usize; 3],
    out_spacing_mm: [f64; 3],
) -> Result<ScalarVolume> {
    let n = voxel_count(out_dims)?;
    let sp_m = moving.spacing_mm;
    let slice_len = out_dims[0] * out_dims[1];
    let mut data = vec![0.0f32; n];
    data.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[0] {
                let pos = [
                    x as f64 * out_spacing_mm[0],
                    y as f64 * out_spacing_mm[1],
                    z as f64 * out_spacing_mm[2],
                ];
                let q = inv.apply(pos);
                let idx = [q[0] / sp_m[0], q[1] / sp_m[1], q[2] / sp_m[2]];
                slice[x + out_dims[0] * y] =
                    sample_trilinear(moving.data(), moving.dims, idx, ScalarOob::Value(AIR_HU))
                        as f32;
            }
        }
    });
    ScalarVolume::new(out_dims, out_spacing_mm, data)
}

/// One pyramid level's optimisation state: the fixed bone voxels, the
/// per-axis basis tables linking voxels to control points, and the moving
/// image the increment is being fitted against.
struct LevelProblem<'a> {
    fixed: &'a ScalarVolume,
    moving: &'a ScalarVolume,
    /// Fixed-volume bone voxels in ascending linear-index order.
    bone: Vec<([usize; 3], f64)>,
    tables: [Vec<(usize, [f64; 4])>; 3],
    grid_dims: [usize; 3],
    threshold: f64,
}

impl<'a> LevelProblem<'a> {
    fn new(
        fixed: &'a ScalarVolume,
        moving: &'a ScalarVolume,
        grid: &BSplineGrid,
        threshold: f64,
    ) -> Result<Self> {
        check_same_grid(
            "deformable level",
            fixed.dims,
            fixed.spacing_mm,
            moving.dims,
            moving.spacing_mm,
        )?;
        let dims = fixed.dims;
        let mut bone = Vec::new();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let v = fixed.get(x, y, z) as f64;
                    if v > threshold {
                        bone.push(([x, y, z], v));
                    }
                }
            }
        }
        let tables = [
            axis_table(dims[0], fixed.spacing_mm[0], grid.control_spacing_mm[0], grid.control_dims[0])?,
            axis_table(dims[1], fixed.spacing_mm[1], grid.control_spacing_mm[1], grid.control_dims[1])?,
            axis_table(dims[2], fixed.spacing_mm[2], grid.control_spacing_mm[2], grid.control_dims[2])?,
        ];
        Ok(Self { fixed, moving, bone, tables, grid_dims: grid.control_dims, threshold })
    }

    /// Displacement at voxel `v` under the given coefficients.
    fn displacement(&self, coeffs: &[[f64; 3]], v: [usize; 3]) -> [f64; 3] {
        let (bx, wx) = self.tables[0][v[0]];
        let (by, wy) = self.tables[1][v[1]];
        let (bz, wz) = self.tables[2][v[2]];
        let mut d = [0.0f64; 3];
        for o in 0..4 {
            for n in 0..4 {
                let wyz = wy[n] * wz[o];
                let row = bx + self.grid_dims[0] * ((by + n) + self.grid_dims[1] * (bz + o));
                for m in 0..4 {
                    let w = wx[m] * wyz;
                    let c = coeffs[row + m];
                    d[0] += c[0] * w;
                    d[1] += c[1] * w;
                    d[2] += c[2] * w;
                }
            }
        }
        d
    }

    /// Bone-masked MSE of the moving image pulled through the increment.
    /// Returns `(mean, count)`; an empty mask reports infinity so the line
    /// search can never treat a vanished overlap as an improvement.
    fn objective(&self, coeffs: &[[f64; 3]]) -> (f64, usize) {
        let sp = self.fixed.spacing_mm;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (v, fval) in &self.bone {
            let d = self.displacement(coeffs, *v);
            let p = [
                v[0] as f64 + d[0] / sp[0],
                v[1] as f64 + d[1] / sp[1],
                v[2] as f64 + d[2] / sp[2],
            ];
            let m = sample_trilinear(self.moving.data(), self.moving.dims, p, ScalarOob::Value(AIR_HU));
            if m > self.threshold {
                let r = m - fval;
                sum += r * r;
                count += 1;
            }
        }
        if count == 0 {
            (f64::INFINITY, 0)
        } else {
            (sum / count as f64, count)
        }
    }

    /// Objective together with its analytic gradient with respect to every
    /// control coefficient.  Each masked voxel's residual back-propagates
    /// through the trilinear interpolant (value per millimetre) and scatters
    /// onto the 64 control points supporting that voxel.
    fn objective_and_grad(&self, coeffs: &[[f64; 3]]) -> (f64, usize, Vec<[f64; 3]>) {
        let sp = self.fixed.spacing_mm;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        let mut grad = vec![[0.0f64; 3]; coeffs.len()];
        for (v, fval) in &self.bone {
            let d = self.displacement(coeffs, *v);
            let p = [
                v[0] as f64 + d[0] / sp[0],
                v[1] as f64 + d[1] / sp[1],
                v[2] as f64 + d[2] / sp[2],
            ];
            let (m, g) =
                sample_trilinear_with_gradient(self.moving.data(), self.moving.dims, p, AIR_HU);
            if m > self.threshold {
                let r = m - fval;
                sum += r * r;
                count += 1;
                // d(residual²)/d(coefficient): image gradient per millimetre
                // times the voxel's basis weight for that control point.
                let f = [
                    2.0 * r * g[0] / sp[0],
                    2.0 * r * g[1] / sp[1],
                    2.0 * r * g[2] / sp[2],
                ];
                let (bx, wx) = self.tables[0][v[0]];
                let (by, wy) = self.tables[1][v[1]];
                let (bz, wz) = self.tables[2][v[2]];
                for o in 0..4 {
                    for n in 0..4 {
                        let wyz = wy[n] * wz[o];
                        let row =
                            bx + self.grid_dims[0] * ((by + n) + self.grid_dims[1] * (bz + o));
                        for m_ in 0..4 {
                            let w = wx[m_] * wyz;
                            let gc = &mut grad[row + m_];
                            gc[0] += f[0] * w;
                            gc[1] += f[1] * w;
                            gc[2] += f[2] * w;
                        }
                    }
                }
            }
        }
        if count == 0 {
            return (f64::INFINITY, 0, grad);
        }
        let inv_n = 1.0 / count as f64;
        for g in &mut grad {
            g[0] *= inv_n;
            g[1] *= inv_n;
            g[2] *= inv_n;
        }
        (sum * inv_n, count, grad)
    }
}

/// Fit one level's free-form increment between `fixed` and the (already
/// base-warped) `moving` image.  Monotone descent: steps are scaled so the
/// fastest-moving control point travels `step` millimetres, halved until
/// the true objective strictly improves, and every coefficient is clamped
/// to the invertibility cap.  Levels whose fixed image has no bone, or no
/// initial overlap, return the zero increment untouched.
fn optimize_level(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    control_spacing_mm: f64,
    cfg: &RegistrationConfig,
) -> Result<BSplineGrid> {
    let mut grid = BSplineGrid::new_for_domain(fixed.dims, fixed.spacing_mm, [control_spacing_mm; 3])?;
    let problem = LevelProblem::new(fixed, moving, &grid, cfg.bone_threshold_hu)?;
    if problem.bone.is_empty() {
        return Ok(grid);
    }
    let cap = [0, 1, 2].map(|a| cfg.displacement_cap_fraction * grid.control_spacing_mm[a]);
    let max_step = cfg.step_size * 8.0;
    let mut step = cfg.step_size;

    for _iter in 0..cfg.iters_per_level {
        let (loss, count, grad) = problem.objective_and_grad(&grid.coefficients);
        if loss.is_nan() {
            return Err(Error::Diverged("deformable objective became NaN".into()));
        }
        if count == 0 || loss == 0.0 {
            break;
        }
        let gmax = grad
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if !(gmax.is_finite() && gmax > 0.0) {
            break;
        }

        let mut accepted = false;
        let mut trial = step;
        for _halving in 0..16 {
            let scale = trial / gmax;
            let cand: Vec<[f64; 3]> = grid
                .coefficients
                .iter()
                .zip(&grad)
                .map(|(c, g)| {
                    [0, 1, 2].map(|a| (c[a] - scale * g[a]).clamp(-cap[a], cap[a]))
                })
                .collect();
            let (cand_loss, cand_count) = problem.objective(&cand);
            if cand_loss.is_nan() {
                return Err(Error::Diverged("deformable objective became NaN".into()));
            }
            if cand_count > 0 && cand_loss < loss {
                grid.coefficients = cand;
                step = (trial * 1.5).min(max_step);
                accepted = true;
                break;
            }
            trial *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(grid)
}

/// Multiscale deformable registration of `moving` onto `fixed`.
///
/// `init` is the similarity transform mapping moving physical coordinates
/// into fixed space (use the identity if the volumes are already aligned).
/// The moving volume is resampled onto the fixed grid exactly once through
/// `init`; each pyramid level then estimates a B-spline increment and
/// composes it onto the running field.  The returned displacement field
/// lives on the fixed grid and absorbs `init`, so warping the *original*
/// moving volume by it reproduces the full alignment:
/// `out(x) = moving(x + field(x))`.
///
/// A final full-resolution check compares the composed field against the
/// zero field on the bone mask and returns whichever scores better, so the
/// result is never worse than the similarity alignment alone.
pub fn bspline_register_multiscale(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    init: &SimilarityTransform,
    cfg: &RegistrationConfig,
) -> Result<DeformationField> {
    cfg.validate()?;
    init.validate()?;

    let same_grid = moving.dims == fixed.dims && moving.spacing_mm == fixed.spacing_mm;
    let aligned = if init.is_identity() && same_grid {
        moving.clone()
    } else {
        resample_through(moving, &init.inverse(), fixed.dims, fixed.spacing_mm)?
    };

    let has_bone =
        |v: &ScalarVolume| v.data().iter().any(|&x| x as f64 > cfg.bone_threshold_hu);
    if !has_bone(fixed) {
        return Err(Error::NoBoneContent(
            "fixed volume has no voxels above threshold".into(),
        ));
    }
    if !has_bone(&aligned) {
        return Err(Error::NoBoneContent(
            "moving volume has no voxels above threshold after initial alignment".into(),
        ));
    }

    let mut base: Option<DeformationField> = None;
    for level in 0..cfg.levels {
        let factor = 1usize << (cfg.levels - 1 - level);
        let (fixed_l, moving_l) = if factor == 1 {
            (fixed.clone(), aligned.clone())
        } else {
            let target = [0, 1, 2].map(|a| fixed.spacing_mm[a] * factor as f64);
            (
                resample_scalar(fixed, target, SampleMode::Trilinear)?,
                resample_scalar(&aligned, target, SampleMode::Trilinear)?,
            )
        };
        let base_l = match &base {
            None => DeformationField::zeros(fixed_l.dims, fixed_l.spacing_mm)?,
            Some(prev) => resample_field(prev, fixed_l.dims, fixed_l.spacing_mm)?,
        };
        let warped_l = warp_scalar(&moving_l, &base_l, AIR_HU)?;
        let grid = optimize_level(&fixed_l, &warped_l, cfg.control_spacing_mm[level], cfg)?;
        let increment = grid.densify(fixed_l.dims, fixed_l.spacing_mm)?;
        base = Some(compose_fields(&base_l, &increment)?);
    }
    let mut total = base.expect("config validation guarantees at least one level");

    // Monotone safeguard at full resolution: keep the composed field only
    // if it strictly beats doing nothing.  (An empty mask counts as
    // infinitely bad on either side.)
    let score = |mse: (f64, usize)| if mse.1 == 0 { f64::INFINITY } else { mse.0 };
    let zero_score = score(masked_mse(fixed, &aligned, cfg.bone_threshold_hu)?);
    let warped = warp_scalar(&aligned, &total, AIR_HU)?;
    let total_score = score(masked_mse(fixed, &warped, cfg.bone_threshold_hu)?);
    if !(total_score < zero_score) {
        total = DeformationField::zeros(fixed.dims, fixed.spacing_mm)?;
    }

    if init.is_identity() {
        return Ok(total);
    }

    // Fold the initial similarity into the field analytically, so the one
    // returned field maps the original moving volume:
    //   field(x) = T⁻¹(x + total(x)) − x.
    let inv = init.inverse();
    let dims = fixed.dims;
    let sp = fixed.spacing_mm;
    let slice_len = dims[0] * dims[1];
    let mut data = vec![[0.0f32; 3]; total.num_voxels()];
    data.par_chunks_mut(slice_len).enumerate().for_each(|(z, slice)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let pos = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                let d = total.get(x, y, z);
                let q = inv.apply([
                    pos[0] + d[0] as f64,
                    pos[1] + d[1] as f64,
                    pos[2] + d[2] as f64,
                ]);
                slice[x + dims[0] * y] =
                    [(q[0] - pos[0]) as f32, (q[1] - pos[1]) as f32, (q[2] - pos[2]) as f32];
            }
        }
    });
    DeformationField::new(dims, sp, data)
}
