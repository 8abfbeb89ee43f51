//! Intensity-based registration of CT volumes.
//!
//! Alignment runs in two stages.  A closed-form-initialised similarity
//! registration ([`similarity_register`]) removes pose and size differences
//! with a translation + rotation + uniform-scale transform.  Multiscale
//! free-form registration ([`bspline_register_multiscale`]) then recovers
//! the remaining shape difference as a dense displacement field driven by a
//! bone-masked mean-squared-error loss ([`masked_mse`]): only voxels that
//! look like bone in *both* images contribute, so soft tissue and air never
//! pull on the optimisation.
//!
//! Displacement fields compose with [`compose_fields`], and every field the
//! multiscale driver returns is a composition of per-level B-spline
//! increments whose coefficients are capped at a fraction of the control
//! spacing — small enough that each increment is invertible, which keeps the
//! composed warp free of folds.

mod bspline;
mod deformable;
mod mse;
mod similarity;

pub use bspline::BSplineGrid;
pub use deformable::{bspline_register_multiscale, compose_fields};
pub use mse::masked_mse;
pub use similarity::{apply_similarity, similarity_register, SimilarityTransform};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings for [`bspline_register_multiscale`].
///
/// The JSON form accepts exactly these field names; unknown keys are
/// rejected so a typo cannot silently fall back to a default.  Every field
/// has a default, so a partial document (or `{}`) is valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    /// Number of pyramid levels (downsampling factor 2 between levels).
    pub levels: usize,
    /// Gradient-descent iterations per level.
    pub iters_per_level: usize,
    /// Initial step length in millimetres of control-point motion.
    pub step_size: f64,
    /// Intensity above which a voxel counts as bone (Hounsfield units).
    pub bone_threshold_hu: f64,
    /// Control-point spacing per level, coarsest first, in millimetres.
    /// Length must equal `levels`.
    pub control_spacing_mm: Vec<f64>,
    /// Per-level coefficient cap as a fraction of the control spacing.
    /// 0.4 is a sufficient condition for each level's warp to be invertible.
    pub displacement_cap_fraction: f64,
    /// Reserved for stochastic variants; the optimizer itself is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iters_per_level: 60,
            step_size: 2.0,
            bone_threshold_hu: 100.0,
            control_spacing_mm: vec![32.0, 16.0, 8.0],
            displacement_cap_fraction: 0.4,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidArgument("levels must be at least 1".into()));
        }
        if self.iters_per_level == 0 {
            return Err(Error::InvalidArgument("iters_per_level must be at least 1".into()));
        }
        if self.control_spacing_mm.len() != self.levels {
            return Err(Error::InvalidArgument(format!(
                "control_spacing_mm has {} entries for {} levels",
                self.control_spacing_mm.len(),
                self.levels
            )));
        }
        if self.control_spacing_mm.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidArgument("control spacings must be positive".into()));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidArgument("step_size must be positive".into()));
        }
        if !(self.displacement_cap_fraction > 0.0 && self.displacement_cap_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "displacement_cap_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if !self.bone_threshold_hu.is_finite() {
            return Err(Error::InvalidArgument("bone_threshold_hu must be finite".into()));
        }
        Ok(())
    }

    /// Parse from a JSON document, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RegistrationConfig = serde_json::from_str(text)
            .map_err(|e| Error::Format { path: None, msg: format!("registration config: {e}") })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
