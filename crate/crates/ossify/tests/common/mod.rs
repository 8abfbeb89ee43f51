//! Shared phantom generators and hashing helpers for the integration suites.
//!
//! The phantoms are analytic: intensities are evaluated from closed-form
//! blob profiles rather than resampled from another grid, so ground truth
//! (blob centres, label cores, applied transforms) is exact by
//! construction.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ossify::registration::BSplineGrid;
use ossify::rng;
use ossify::volume::{DeformationField, LabelVolume, ScalarVolume};

/// Background intensity of every phantom (HU).
pub const AIR: f32 = -1000.0;

/// Peak intensity a blob adds at its centre (HU above background).
pub const BLOB_PEAK: f64 = 1500.0;

/// Air background plus quadratic-profile blobs: each `(centre_mm, radius_mm)`
/// contributes `1500·max(0, 1 − (d/r)²)`, so intensity crosses the 100 HU
/// bone threshold at about 52% of the radius.
pub fn blob_phantom(dims: [usize; 3], sp: [f64; 3], blobs: &[([f64; 3], f64)]) -> ScalarVolume {
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                data.push(blob_value(p, blobs));
            }
        }
    }
    ScalarVolume::new(dims, sp, data).unwrap()
}

/// Closed-form phantom intensity at a physical position.
pub fn blob_value(p: [f64; 3], blobs: &[([f64; 3], f64)]) -> f32 {
    let mut v = AIR as f64;
    for (c, r) in blobs {
        let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
        let q = 1.0 - d2 / (r * r);
        if q > 0.0 {
            v += BLOB_PEAK * q;
        }
    }
    v as f32
}

/// Labels matching [`blob_phantom`]: voxels inside a blob's bone core
/// (intensity contribution above 1100 HU, i.e. scan value above 100 HU)
/// get class `blob index + 1`; overlaps go to the strongest blob.
pub fn blob_labels(dims: [usize; 3], sp: [f64; 3], blobs: &[([f64; 3], f64)]) -> LabelVolume {
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                let mut best = 0u16;
                let mut best_q = 1100.0 / BLOB_PEAK;
                for (i, (c, r)) in blobs.iter().enumerate() {
                    let d2 =
                        (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    let q = 1.0 - d2 / (r * r);
                    if q > best_q {
                        best_q = q;
                        best = (i + 1) as u16;
                    }
                }
                data.push(best);
            }
        }
    }
    LabelVolume::new(dims, sp, (blobs.len() + 1) as u16, data).unwrap()
}

/// Smooth random control grid: every coefficient component is a seeded
/// normal draw scaled by `amp` and clamped to `±amp` millimetres, so the
/// resulting displacement stays cap-respecting for caps above `amp`.
pub fn smooth_grid(
    dims: [usize; 3],
    sp: [f64; 3],
    control_spacing_mm: [f64; 3],
    amp: f64,
    seed: u64,
) -> BSplineGrid {
    let mut grid = BSplineGrid::new_for_domain(dims, sp, control_spacing_mm).unwrap();
    for (i, c) in grid.coefficients.iter_mut().enumerate() {
        for (a, slot) in c.iter_mut().enumerate() {
            *slot = (amp * rng::normal(seed, (3 * i + a) as u64)).clamp(-amp, amp);
        }
    }
    grid
}

/// Dense field for [`smooth_grid`] on the same image grid.
pub fn smooth_field(
    dims: [usize; 3],
    sp: [f64; 3],
    control_spacing_mm: [f64; 3],
    amp: f64,
    seed: u64,
) -> DeformationField {
    smooth_grid(dims, sp, control_spacing_mm, amp, seed).densify(dims, sp).unwrap()
}

/// Uniform random intensities in [−1100, 2000) HU.
pub fn random_scan(dims: [usize; 3], sp: [f64; 3], seed: u64) -> ScalarVolume {
    let n = dims[0] * dims[1] * dims[2];
    let data = (0..n)
        .map(|i| (-1100.0 + 3100.0 * rng::unit_open(seed, i as u64)) as f32)
        .collect();
    ScalarVolume::new(dims, sp, data).unwrap()
}

/// Uniform random labels over `0..num_classes`.
pub fn random_labels(dims: [usize; 3], sp: [f64; 3], num_classes: u16, seed: u64) -> LabelVolume {
    let n = dims[0] * dims[1] * dims[2];
    let data = (0..n)
        .map(|i| rng::uniform_below(seed, i as u64, num_classes as usize) as u16)
        .collect();
    LabelVolume::new(dims, sp, num_classes, data).unwrap()
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).unwrap();
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Map of relative path → SHA-256 for every file under `dir` (recursive).
pub fn dir_file_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_file(&path));
            }
        }
    }
    out
}
