//! Core volumetric types shared by the whole toolkit.
//!
//! All grids use the voxel-center convention: voxel `(x, y, z)` sits at
//! physical position `(x·sx, y·sy, z·sz)` millimetres.  There is no origin or
//! orientation metadata anywhere — volumes are plain axis-aligned grids, and
//! anything that needs two volumes to agree requires identical dims and
//! spacing.  Data is stored x-fastest: `index = x + dims[0]·(y + dims[1]·z)`.

use crate::error::{Error, Result};

/// Dense 3-D grid of `f32` intensities (CT scans are in Hounsfield units,
/// but nothing here assumes a particular calibration).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    data: Vec<f32>,
}

/// Dense 3-D grid of class labels.  Label `0` is always background and
/// every voxel is `< num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub num_classes: u16,
    data: Vec<u16>,
}

/// Dense displacement field: one millimetre-valued 3-vector per voxel.
/// A field `f` warps a volume as `out(x) = vol(x + f(x))` with `x` in
/// physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    data: Vec<[f32; 3]>,
}

fn validate_grid(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "dims must be positive on every axis, got {dims:?}"
        )));
    }
    if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "spacing must be finite and positive on every axis, got {spacing_mm:?}"
        )));
    }
    Ok(())
}

/// Number of voxels implied by `dims`, erroring on overflow rather than
/// silently wrapping (a malformed header can claim absurd dims).
pub(crate) fn voxel_count(dims: [usize; 3]) -> Result<usize> {
    dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| Error::InvalidArgument(format!("dims {dims:?} overflow")))
}

/// Errors unless `a` and `b` describe the same grid (identical dims, equal
/// spacing).  Spacing is compared exactly: grids that are meant to match come
/// from the same header bytes or the same resample call, so any difference is
/// a real mismatch, not float noise.
pub fn check_same_grid(
    what: &str,
    a_dims: [usize; 3],
    a_sp: [f64; 3],
    b_dims: [usize; 3],
    b_sp: [f64; 3],
) -> Result<()> {
    if a_dims != b_dims || a_sp != b_sp {
        return Err(Error::GridMismatch(format!(
            "{what}: {a_dims:?} @ {a_sp:?} mm vs {b_dims:?} @ {b_sp:?} mm"
        )));
    }
    Ok(())
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<f32>) -> Result<Self> {
        validate_grid(dims, spacing_mm)?;
        let n = voxel_count(dims)?;
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scalar volume contains non-finite value {bad}"
            )));
        }
        Ok(Self { dims, spacing_mm, data })
    }

    /// Volume filled with a constant value.
    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], value: f32) -> Result<Self> {
        let n = voxel_count(dims)?;
        Self::new(dims, spacing_mm, vec![value; n])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }
}

impl LabelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: [f64; 3],
        num_classes: u16,
        data: Vec<u16>,
    ) -> Result<Self> {
        validate_grid(dims, spacing_mm)?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be at least 2 (background plus one class), got {num_classes}"
            )));
        }
        let n = voxel_count(dims)?;
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for num_classes {num_classes}"
            )));
        }
        Ok(Self { dims, spacing_mm, num_classes, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.index(x, y, z)]
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }

    /// Sorted list of classes that actually occur in the volume.
    pub fn present_classes(&self) -> Vec<u16> {
        let mut seen = vec![false; self.num_classes as usize];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..self.num_classes).filter(|&c| seen[c as usize]).collect()
    }
}

impl DeformationField {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], data: Vec<[f32; 3]>) -> Result<Self> {
        validate_grid(dims, spacing_mm)?;
        let n = voxel_count(dims)?;
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "field length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "deformation field contains non-finite vector {bad:?}"
            )));
        }
        Ok(Self { dims, spacing_mm, data })
    }

    /// All-zero field on the given grid (the identity warp).
    pub fn zeros(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        let n = voxel_count(dims)?;
        validate_grid(dims, spacing_mm)?;
        Ok(Self { dims, spacing_mm, data: vec![[0.0; 3]; n] })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        self.data[self.index(x, y, z)]
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }

    /// Largest displacement magnitude in the field, in millimetres.
    pub fn max_magnitude_mm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let [a, b, c] = v.map(|c| c as f64);
                (a * a + b * b + c * c).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Left/right label exchange table used when mirroring a volume.
///
/// The table is a set of disjoint `(left, right)` pairs; applying it swaps
/// the two ids of every pair and leaves all other labels (including
/// background) unchanged, so applying it twice is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapTable {
    pairs: Vec<(u16, u16)>,
}

impl SwapTable {
    pub fn new(pairs: Vec<(u16, u16)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(l, r) in &pairs {
            if l == r {
                return Err(Error::InvalidArgument(format!(
                    "swap pair ({l}, {r}) maps a label to itself"
                )));
            }
            if !seen.insert(l) || !seen.insert(r) {
                return Err(Error::InvalidArgument(format!(
                    "label appears in more than one swap pair: ({l}, {r})"
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(u16, u16)] {
        &self.pairs
    }

    /// Swapped counterpart of `label`, or `label` itself if unpaired.
    pub fn apply(&self, label: u16) -> u16 {
        for &(l, r) in &self.pairs {
            if label == l {
                return r;
            }
            if label == r {
                return l;
            }
        }
        label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_volume_rejects_bad_shapes() {
        assert!(ScalarVolume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0, -1.0, 1.0], vec![0.0; 8]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0; 3], vec![0.0; 7]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0; 3], vec![f32::NAN; 8]).is_err());
        assert!(ScalarVolume::new([2, 2, 2], [1.0; 3], vec![0.0; 8]).is_ok());
    }

    #[test]
    fn label_volume_rejects_out_of_range_labels() {
        assert!(LabelVolume::new([2, 1, 1], [1.0; 3], 3, vec![0, 3]).is_err());
        assert!(LabelVolume::new([2, 1, 1], [1.0; 3], 1, vec![0, 0]).is_err());
        assert!(LabelVolume::new([2, 1, 1], [1.0; 3], 3, vec![0, 2]).is_ok());
    }

    #[test]
    fn indexing_is_x_fastest() {
        let data: Vec<f32> = (0..24).map(|i| i as f32).collect();
        let v = ScalarVolume::new([2, 3, 4], [1.0; 3], data).unwrap();
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0), 2.0);
        assert_eq!(v.get(0, 0, 1), 6.0);
        assert_eq!(v.get(1, 2, 3), 23.0);
    }

    #[test]
    fn swap_table_is_an_involution_and_rejects_duplicates() {
        let t = SwapTable::new(vec![(1, 2), (5, 9)]).unwrap();
        for label in 0..12 {
            assert_eq!(t.apply(t.apply(label)), label);
        }
        assert_eq!(t.apply(1), 2);
        assert_eq!(t.apply(9), 5);
        assert_eq!(t.apply(0), 0);
        assert_eq!(t.apply(7), 7);

        assert!(SwapTable::new(vec![(1, 1)]).is_err());
        assert!(SwapTable::new(vec![(1, 2), (2, 3)]).is_err());
    }

    #[test]
    fn present_classes_sorted_unique() {
        let v = LabelVolume::new([4, 1, 1], [1.0; 3], 10, vec![3, 0, 3, 7]).unwrap();
        assert_eq!(v.present_classes(), vec![0, 3, 7]);
    }
}
