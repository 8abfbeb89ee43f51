//! Scalar and vector sampling at continuous voxel coordinates.
//!
//! Positions here are continuous *index* coordinates (voxel units, not mm);
//! callers convert from physical positions by dividing by the spacing.  A
//! position is in bounds when every component lies in `[0, dim-1]` — the span
//! of voxel centers.  There is no extrapolation beyond that span.
//!
//! Sampling at an exactly integral in-bounds position reproduces the stored
//! voxel value bit for bit: zero-weight corners are skipped rather than
//! multiplied in, so no rounding is introduced.

/// Out-of-bounds policy for scalar sampling.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ScalarOob {
    /// Return this value for any out-of-bounds position.
    Value(f32),
    /// Clamp the position onto the voxel-center span and sample there.
    Clamp,
}

/// Out-of-bounds policy for label sampling.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LabelOob {
    /// Out-of-bounds positions are background.
    Zero,
    /// Clamp the position onto the voxel-center span and sample there.
    Clamp,
}

#[inline]
pub(crate) fn in_bounds(p: [f64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (dims[a] - 1) as f64)
}

#[inline]
fn clamp_to_span(p: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| p[a].clamp(0.0, (dims[a] - 1) as f64))
}

/// Cell base index and in-cell fraction for one axis.
///
/// The fraction is in `[0, 1]`; a position exactly on the last voxel center
/// is expressed as fraction 1.0 of the previous cell so that `base + 1` is
/// always a valid index on axes with at least two voxels.
#[inline]
fn axis_cell(p: f64, dim: usize) -> (usize, f64) {
    if dim == 1 {
        return (0, 0.0);
    }
    let mut i = p.floor();
    let max_base = (dim - 2) as f64;
    if i > max_base {
        i = max_base;
    }
    (i as usize, p - i)
}

/// Trilinear sample of a scalar grid at position `p`.
pub(crate) fn sample_trilinear(data: &[f32], dims: [usize; 3], p: [f64; 3], oob: ScalarOob) -> f64 {
    let p = if in_bounds(p, dims) {
        p
    } else {
        match oob {
            ScalarOob::Value(v) => return v as f64,
            ScalarOob::Clamp => clamp_to_span(p, dims),
        }
    };
    let (x0, fx) = axis_cell(p[0], dims[0]);
    let (y0, fy) = axis_cell(p[1], dims[1]);
    let (z0, fz) = axis_cell(p[2], dims[2]);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let wz = [1.0 - fz, fz];

    let mut acc = 0.0f64;
    for c in 0..2usize {
        if wz[c] == 0.0 {
            continue;
        }
        for b in 0..2usize {
            if wy[b] == 0.0 {
                continue;
            }
            let row = x0 + dims[0] * ((y0 + b) + dims[1] * (z0 + c));
            for a in 0..2usize {
                if wx[a] == 0.0 {
                    continue;
                }
                acc += data[row + a] as f64 * (wx[a] * wy[b] * wz[c]);
            }
        }
    }
    acc
}

/// Trilinear sample together with the spatial gradient of the interpolant,
/// in value-per-voxel units.  Out-of-bounds positions yield the `oob` value
/// with a zero gradient (the sampled function is constant there).
pub(crate) fn sample_trilinear_with_gradient(
    data: &[f32],
    dims: [usize; 3],
    p: [f64; 3],
    oob_value: f32,
) -> (f64, [f64; 3]) {
    if !in_bounds(p, dims) {
        return (oob_value as f64, [0.0; 3]);
    }
    let (x0, fx) = axis_cell(p[0], dims[0]);
    let (y0, fy) = axis_cell(p[1], dims[1]);
    let (z0, fz) = axis_cell(p[2], dims[2]);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let wz = [1.0 - fz, fz];
    // Derivative of the per-axis weights with respect to the coordinate.
    let dx = [-1.0, 1.0];

    let mut value = 0.0f64;
    let mut grad = [0.0f64; 3];
    for c in 0..2usize {
        for b in 0..2usize {
            let row = x0 + dims[0] * ((y0 + b) + dims[1] * (z0 + c));
            for a in 0..2usize {
                // Degenerate axes (dim == 1) have fraction 0, so corners at
                // offset 1 would index out of range; their weight is 0 and
                // their derivative is meaningless — skip them entirely.
                if (a == 1 && dims[0] == 1) || (b == 1 && dims[1] == 1) || (c == 1 && dims[2] == 1)
                {
                    continue;
                }
                let v = data[row + a] as f64;
                value += v * wx[a] * wy[b] * wz[c];
                grad[0] += v * dx[a] * wy[b] * wz[c];
                grad[1] += v * wx[a] * dx[b] * wz[c];
                grad[2] += v * wx[a] * wy[b] * dx[c];
            }
        }
    }
    if dims[0] == 1 {
        grad[0] = 0.0;
    }
    if dims[1] == 1 {
        grad[1] = 0.0;
    }
    if dims[2] == 1 {
        grad[2] = 0.0;
    }
    (value, grad)
}

/// Nearest-neighbour sample of a label grid at position `p`.
/// Ties at exactly half a voxel round towards the higher index.
pub(crate) fn sample_nearest_u16(data: &[u16], dims: [usize; 3], p: [f64; 3], oob: LabelOob) -> u16 {
    let p = if in_bounds(p, dims) {
        p
    } else {
        match oob {
            LabelOob::Zero => return 0,
            LabelOob::Clamp => clamp_to_span(p, dims),
        }
    };
    let idx = [0, 1, 2].map(|a| {
        let r = (p[a] + 0.5).floor() as usize;
        r.min(dims[a] - 1)
    });
    data[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])]
}

/// Trilinear sample of a 3-vector grid (displacement field), with
/// clamp-to-edge behaviour outside the span.
pub(crate) fn sample_field_trilinear(data: &[[f32; 3]], dims: [usize; 3], p: [f64; 3]) -> [f64; 3] {
    let p = clamp_to_span(p, dims);
    let (x0, fx) = axis_cell(p[0], dims[0]);
    let (y0, fy) = axis_cell(p[1], dims[1]);
    let (z0, fz) = axis_cell(p[2], dims[2]);
    let wx = [1.0 - fx, fx];
    let wy = [1.0 - fy, fy];
    let wz = [1.0 - fz, fz];

    let mut acc = [0.0f64; 3];
    for c in 0..2usize {
        if wz[c] == 0.0 {
            continue;
        }
        for b in 0..2usize {
            if wy[b] == 0.0 {
                continue;
            }
            let row = x0 + dims[0] * ((y0 + b) + dims[1] * (z0 + c));
            for a in 0..2usize {
                if wx[a] == 0.0 {
                    continue;
                }
                let w = wx[a] * wy[b] * wz[c];
                let v = data[row + a];
                acc[0] += v[0] as f64 * w;
                acc[1] += v[1] as f64 * w;
                acc[2] += v[2] as f64 * w;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct eight-corner evaluation, written independently of the
    /// production path: explicit corner reads, explicit weight products,
    /// no zero-weight skipping.  Only valid strictly inside the grid.
    fn trilinear_oracle(data: &[f32], dims: [usize; 3], p: [f64; 3]) -> f64 {
        let x0 = p[0].floor() as usize;
        let y0 = p[1].floor() as usize;
        let z0 = p[2].floor() as usize;
        let (fx, fy, fz) = (p[0] - x0 as f64, p[1] - y0 as f64, p[2] - z0 as f64);
        let at = |x: usize, y: usize, z: usize| data[x + dims[0] * (y + dims[1] * z)] as f64;
        at(x0, y0, z0) * (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
            + at(x0 + 1, y0, z0) * fx * (1.0 - fy) * (1.0 - fz)
            + at(x0, y0 + 1, z0) * (1.0 - fx) * fy * (1.0 - fz)
            + at(x0, y0, z0 + 1) * (1.0 - fx) * (1.0 - fy) * fz
            + at(x0 + 1, y0 + 1, z0) * fx * fy * (1.0 - fz)
            + at(x0 + 1, y0, z0 + 1) * fx * (1.0 - fy) * fz
            + at(x0, y0 + 1, z0 + 1) * (1.0 - fx) * fy * fz
            + at(x0 + 1, y0 + 1, z0 + 1) * fx * fy * fz
    }

    fn ramp_data(dims: [usize; 3]) -> Vec<f32> {
        // Deterministic pseudo-random-ish but smooth-free data: mix of index
        // products so that every corner differs.
        let mut v = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    v.push((x as f32) * 1.25 + (y as f32) * (-3.5) + (z as f32) * 7.0
                        + (x * y) as f32 * 0.125
                        + (y * z) as f32 * 0.0625);
                }
            }
        }
        v
    }

    #[test]
    fn matches_direct_eight_corner_evaluation() {
        let dims = [5, 4, 6];
        let data = ramp_data(dims);
        // A spread of strictly interior, non-integral positions.
        let positions = [
            [0.5, 0.5, 0.5],
            [1.25, 2.75, 3.5],
            [3.9, 0.1, 4.99],
            [2.0, 1.5, 2.5], // integral on one axis only
            [0.01, 2.99, 0.5],
        ];
        for p in positions {
            let got = sample_trilinear(&data, dims, p, ScalarOob::Value(-1024.0));
            let want = trilinear_oracle(&data, dims, p);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "at {p:?}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn integral_positions_reproduce_voxels_bitwise() {
        let dims = [4, 3, 3];
        let data = ramp_data(dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let got = sample_trilinear(&data, dims, p, ScalarOob::Value(0.0)) as f32;
                    let want = data[x + dims[0] * (y + dims[1] * z)];
                    assert_eq!(got.to_bits(), want.to_bits(), "at {p:?}");
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_policies() {
        let dims = [2, 2, 2];
        let data = vec![5.0f32; 8];
        let outside = [-0.001, 1.0, 1.0];
        assert_eq!(
            sample_trilinear(&data, dims, outside, ScalarOob::Value(-1024.0)),
            -1024.0
        );
        assert_eq!(sample_trilinear(&data, dims, outside, ScalarOob::Clamp), 5.0);
        let labels = vec![3u16; 8];
        assert_eq!(sample_nearest_u16(&labels, dims, outside, LabelOob::Zero), 0);
        assert_eq!(sample_nearest_u16(&labels, dims, outside, LabelOob::Clamp), 3);
    }

    #[test]
    fn gradient_matches_finite_differences_inside_cells() {
        let dims = [5, 5, 5];
        let data = ramp_data(dims);
        let h = 1e-6;
        for p in [[1.3, 2.6, 0.7], [3.2, 1.1, 3.8], [0.4, 3.7, 2.2]] {
            let (_, g) = sample_trilinear_with_gradient(&data, dims, p, 0.0);
            for axis in 0..3 {
                let mut lo = p;
                let mut hi = p;
                lo[axis] -= h;
                hi[axis] += h;
                let flo = sample_trilinear(&data, dims, lo, ScalarOob::Clamp);
                let fhi = sample_trilinear(&data, dims, hi, ScalarOob::Clamp);
                let fd = (fhi - flo) / (2.0 * h);
                assert!(
                    (g[axis] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "axis {axis} at {p:?}: analytic {} vs fd {fd}",
                    g[axis]
                );
            }
        }
    }

    #[test]
    fn nearest_rounds_half_up() {
        let dims = [3, 1, 1];
        let data = vec![10u16, 20, 30];
        assert_eq!(sample_nearest_u16(&data, dims, [0.5, 0.0, 0.0], LabelOob::Zero), 20);
        assert_eq!(sample_nearest_u16(&data, dims, [1.49, 0.0, 0.0], LabelOob::Zero), 20);
        assert_eq!(sample_nearest_u16(&data, dims, [1.5, 0.0, 0.0], LabelOob::Zero), 30);
    }

    #[test]
    fn field_sampling_interpolates_componentwise() {
        let dims = [2, 1, 1];
        let data = vec![[0.0f32, 10.0, -4.0], [2.0, 20.0, -8.0]];
        let v = sample_field_trilinear(&data, dims, [0.25, 0.0, 0.0]);
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] - 12.5).abs() < 1e-12);
        assert!((v[2] - -5.0).abs() < 1e-12);
        // Outside the span the field clamps to the border value.
        let v = sample_field_trilinear(&data, dims, [5.0, 0.0, 0.0]);
        assert_eq!(v, [2.0, 20.0, -8.0]);
    }
}
