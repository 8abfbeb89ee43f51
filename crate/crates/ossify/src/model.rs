//! Statistical deformation models.
//!
//! A set of dense displacement fields, all defined on one reference grid, is
//! flattened to vectors and decomposed with PCA.  The resulting model — mean
//! field, orthonormal principal components and per-component variances — is
//! a compact generator of plausible deformations: drawing component weights
//! `w_i ~ N(0, λ_i)` and forming `mean + Σ w_i·v_i` yields a new field, and
//! warping a labelled reference pair by sampled fields yields synthetic
//! labelled volumes.

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{check_same_grid, DeformationField, LabelVolume, ScalarVolume};
use crate::warp::{warp_labels, warp_scalar};
use nalgebra::DMatrix;

/// Intensity handed to voxels that a synthesis warp pulls from outside the
/// reference scan: air, in Hounsfield units.
pub const AIR_HU: f32 = -1024.0;

/// PCA model over flattened displacement fields.
///
/// Component vectors are unit-norm and mutually orthogonal; eigenvalues are
/// the variances along them, sorted non-increasing.  All vectors have
/// `3 · dims[0] · dims[1] · dims[2]` entries, ordered x-fastest with the
/// three displacement components interleaved per voxel.
#[derive(Debug, Clone)]
pub struct DeformationModel {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub n_training: usize,
}

impl DeformationModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn flat_len(&self) -> usize {
        3 * self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Structural validation used by the file reader: lengths consistent,
    /// eigenvalues non-negative and non-increasing, everything finite.
    pub(crate) fn validate(&self) -> Result<()> {
        let d = self.flat_len();
        if self.mean.len() != d {
            return Err(Error::InvalidArgument(format!(
                "model mean length {} does not match dims {:?}",
                self.mean.len(),
                self.dims
            )));
        }
        if self.components.len() != self.eigenvalues.len() {
            return Err(Error::InvalidArgument(
                "component/eigenvalue count mismatch".into(),
            ));
        }
        for c in &self.components {
            if c.len() != d {
                return Err(Error::InvalidArgument("component length mismatch".into()));
            }
        }
        if self.mean.iter().any(|v| !v.is_finite())
            || self.components.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("model contains non-finite values".into()));
        }
        for w in self.eigenvalues.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidArgument("eigenvalues not sorted".into()));
            }
        }
        if self.eigenvalues.iter().any(|&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::InvalidArgument("eigenvalues must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn flatten(field: &DeformationField) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * field.num_voxels());
    for v in field.data() {
        out.push(v[0] as f64);
        out.push(v[1] as f64);
        out.push(v[2] as f64);
    }
    out
}

/// Fit a PCA model to displacement fields.
///
/// All fields must share one grid and there must be at least two of them.
/// At most `n - 1` components carry variance for `n` training fields, so the
/// retained count is `min(n_components, n - 1)`.
pub fn build_deformation_model(
    fields: &[DeformationField],
    n_components: usize,
) -> Result<DeformationModel> {
    if fields.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "model building needs at least 2 fields, got {}",
            fields.len()
        )));
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("n_components must be at least 1".into()));
    }
    let dims = fields[0].dims;
    let sp = fields[0].spacing_mm;
    for f in &fields[1..] {
        check_same_grid("build_deformation_model", dims, sp, f.dims, f.spacing_mm)?;
    }

    let n = fields.len();
    let d = 3 * fields[0].num_voxels();
    let mut rows: Vec<Vec<f64>> = fields.iter().map(flatten).collect();

    let mut mean = vec![0.0f64; d];
    for row in &rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for row in &mut rows {
        for (v, &m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    // Thin SVD of the centered n×d data matrix.  Right singular vectors are
    // the principal directions; singular values map to variances via
    // λ_i = s_i² / (n - 1).
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = DMatrix::from_row_slice(n, d, &flat);
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("svd requested right singular vectors");

    let mut spectrum: Vec<(f64, Vec<f64>)> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let lambda = s * s / (n as f64 - 1.0);
            let comp: Vec<f64> = v_t.row(i).iter().copied().collect();
            (lambda, comp)
        })
        .collect();
    // nalgebra does not promise an ordering; sort by variance, largest first.
    spectrum.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite eigenvalues"));

    let keep = n_components.min(n - 1);
    spectrum.truncate(keep);

    // Canonical sign: the entry of largest magnitude is made positive, so a
    // model built from the same fields is identical run to run regardless of
    // sign choices inside the decomposition.
    let mut components = Vec::with_capacity(keep);
    let mut eigenvalues = Vec::with_capacity(keep);
    for (lambda, mut comp) in spectrum {
        let mut pivot = 0usize;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[pivot].abs() {
                pivot = i;
            }
        }
        if comp[pivot] < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        components.push(comp);
        eigenvalues.push(lambda);
    }

    Ok(DeformationModel { dims, spacing_mm: sp, mean, components, eigenvalues, n_training: n })
}

/// Draw one weight per retained component: `w_i = sqrt(λ_i) · z_i` with
/// `z_i` the i-th standard normal of the seed's stream.  Components with
/// zero variance get exactly 0.0, not a rounded tiny number.
pub fn sample_weights(model: &DeformationModel, seed: u64) -> Vec<f64> {
    model
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            if lambda == 0.0 {
                0.0
            } else {
                lambda.sqrt() * rng::normal(seed, i as u64)
            }
        })
        .collect()
}

/// Assemble `mean + Σ w_i·v_i` into a dense field on the model grid.
pub fn synthesize_field(model: &DeformationModel, weights: &[f64]) -> Result<DeformationField> {
    if weights.len() != model.n_components() {
        return Err(Error::InvalidArgument(format!(
            "got {} weights for {} components",
            weights.len(),
            model.n_components()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite".into()));
    }
    let mut flat = model.mean.clone();
    for (w, comp) in weights.iter().zip(&model.components) {
        if *w == 0.0 {
            continue;
        }
        for (f, &c) in flat.iter_mut().zip(comp) {
            *f += w * c;
        }
    }
    let data: Vec<[f32; 3]> = flat
        .chunks_exact(3)
        .map(|c| [c[0] as f32, c[1] as f32, c[2] as f32])
        .collect();
    DeformationField::new(model.dims, model.spacing_mm, data)
}

/// Synthesize one labelled volume pair: warp the reference scan and labels
/// by the field generated from `weights`.
pub fn synthesize_sample(
    model: &DeformationModel,
    ref_scan: &ScalarVolume,
    ref_labels: &LabelVolume,
    weights: &[f64],
) -> Result<(ScalarVolume, LabelVolume)> {
    check_same_grid(
        "synthesize_sample (scan vs model)",
        ref_scan.dims,
        ref_scan.spacing_mm,
        model.dims,
        model.spacing_mm,
    )?;
    check_same_grid(
        "synthesize_sample (labels vs model)",
        ref_labels.dims,
        ref_labels.spacing_mm,
        model.dims,
        model.spacing_mm,
    )?;
    let field = synthesize_field(model, weights)?;
    let scan = warp_scalar(ref_scan, &field, AIR_HU)?;
    let labels = warp_labels(ref_labels, &field)?;
    Ok((scan, labels))
}
