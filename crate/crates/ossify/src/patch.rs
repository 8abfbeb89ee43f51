//! Patch location sampling and extraction for 3-D training pipelines.
//!
//! Two sampling policies are provided.  *Uniform* draws a patch origin
//! uniformly over every valid corner position.  *Balanced* equalises class
//! exposure instead of volume exposure: it draws a foreground class
//! uniformly among the classes present in the volume, then a voxel
//! uniformly within that class, then an origin uniformly among the patches
//! containing that voxel — so a class occupying a single voxel is picked
//! exactly as often as one covering half the skeleton.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{LabelVolume, ScalarVolume};

/// A patch location: corner voxel (inclusive) plus extent.
///
/// `guaranteed_class` is set by the balanced sampler to the class whose
/// presence in the patch is guaranteed by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub origin: [usize; 3],
    pub size: [usize; 3],
    pub guaranteed_class: Option<u16>,
}

fn check_patch_size(dims: [usize; 3], size: [usize; 3]) -> Result<()> {
    if size.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "patch size must be positive on every axis, got {size:?}"
        )));
    }
    if (0..3).any(|a| size[a] > dims[a]) {
        return Err(Error::InvalidArgument(format!(
            "patch size {size:?} exceeds volume dims {dims:?}"
        )));
    }
    Ok(())
}

/// Draw a patch origin uniformly over all valid corner positions of a
/// volume with the given dims.  Deterministic in `seed`.
pub fn uniform_patch(dims: [usize; 3], size: [usize; 3], seed: u64) -> Result<PatchSpec> {
    check_patch_size(dims, size)?;
    let origin = [0, 1, 2].map(|a| rng::uniform_below(seed, a as u64, dims[a] - size[a] + 1));
    Ok(PatchSpec { origin, size, guaranteed_class: None })
}

/// Reusable class-balanced sampler.
///
/// Construction scans the label volume once and indexes every foreground
/// voxel by class; [`BalancedSampler::draw`] is then cheap enough to call
/// per training patch.  Background (class 0) is never a candidate.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    dims: [usize; 3],
    /// Present non-background classes, ascending.
    classes: Vec<u16>,
    /// Voxel coordinates per class, parallel to `classes`, each list in
    /// ascending linear-index order.
    voxels_by_class: Vec<Vec<[usize; 3]>>,
}

impl BalancedSampler {
    pub fn new(labels: &LabelVolume) -> Result<Self> {
        let dims = labels.dims;
        let classes = labels
            .present_classes()
            .into_iter()
            .filter(|&c| c != 0)
            .collect::<Vec<_>>();
        if classes.is_empty() {
            return Err(Error::InvalidArgument(
                "no foreground class: label volume is entirely background".into(),
            ));
        }
        let mut voxels_by_class = vec![Vec::new(); classes.len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let c = labels.get(x, y, z);
                    if c != 0 {
                        let slot = classes.binary_search(&c).expect("class collected above");
                        voxels_by_class[slot].push([x, y, z]);
                    }
                }
            }
        }
        Ok(Self { dims, classes, voxels_by_class })
    }

    /// The candidate classes this sampler draws from.
    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    /// Draw one balanced patch.  The returned spec's `guaranteed_class` is
    /// the drawn class, and the patch is guaranteed to contain at least one
    /// voxel of it.
    pub fn draw(&self, size: [usize; 3], seed: u64) -> Result<PatchSpec> {
        check_patch_size(self.dims, size)?;
        let slot = rng::uniform_below(seed, 0, self.classes.len());
        let voxels = &self.voxels_by_class[slot];
        let v = voxels[rng::uniform_below(seed, 1, voxels.len())];
        // Valid origins containing v on axis a: the patch [o, o+size) must
        // satisfy o ≤ v < o+size and stay inside the volume.
        let origin = [0, 1, 2].map(|a| {
            let lo = (v[a] + 1).saturating_sub(size[a]);
            let hi = (self.dims[a] - size[a]).min(v[a]);
            lo + rng::uniform_below(seed, 2 + a as u64, hi - lo + 1)
        });
        Ok(PatchSpec { origin, size, guaranteed_class: Some(self.classes[slot]) })
    }
}

/// One-shot balanced draw; prefer [`BalancedSampler`] when drawing many
/// patches from the same volume.
pub fn balanced_patch(labels: &LabelVolume, size: [usize; 3], seed: u64) -> Result<PatchSpec> {
    BalancedSampler::new(labels)?.draw(size, seed)
}

fn check_spec(dims: [usize; 3], spec: &PatchSpec) -> Result<()> {
    check_patch_size(dims, spec.size)?;
    if (0..3).any(|a| spec.origin[a] + spec.size[a] > dims[a]) {
        return Err(Error::InvalidArgument(format!(
            "patch at {:?} size {:?} exceeds volume dims {dims:?}",
            spec.origin, spec.size
        )));
    }
    Ok(())
}

/// Copy the sub-volume described by `spec` out of a scalar volume.
/// Spacing is preserved.
pub fn extract_scalar_patch(vol: &ScalarVolume, spec: &PatchSpec) -> Result<ScalarVolume> {
    check_spec(vol.dims, spec)?;
    let mut data = Vec::with_capacity(spec.size[0] * spec.size[1] * spec.size[2]);
    for z in 0..spec.size[2] {
        for y in 0..spec.size[1] {
            let row = vol.index(spec.origin[0], spec.origin[1] + y, spec.origin[2] + z);
            data.extend_from_slice(&vol.data()[row..row + spec.size[0]]);
        }
    }
    ScalarVolume::new(spec.size, vol.spacing_mm, data)
}

/// Copy the sub-volume described by `spec` out of a label volume.
/// Spacing and the class-count declaration are preserved.
pub fn extract_label_patch(vol: &LabelVolume, spec: &PatchSpec) -> Result<LabelVolume> {
    check_spec(vol.dims, spec)?;
    let mut data = Vec::with_capacity(spec.size[0] * spec.size[1] * spec.size[2]);
    for z in 0..spec.size[2] {
        for y in 0..spec.size[1] {
            let row = vol.index(spec.origin[0], spec.origin[1] + y, spec.origin[2] + z);
            data.extend_from_slice(&vol.data()[row..row + spec.size[0]]);
        }
    }
    LabelVolume::new(spec.size, vol.spacing_mm, vol.num_classes, data)
}
