//! Volumetric CT toolkit for bone segmentation workflows.
//!
//! The crate covers the chain from raw labelled/unlabelled CT volumes to
//! synthetic training data and evaluation numbers:
//!
//! * [`volume`] — scalar, label and displacement-field grids plus the
//!   sampling conventions everything else relies on.
//! * [`resample`], [`warp`], [`flip`], [`jacobian`] — grid resampling,
//!   warping by dense fields, sagittal mirroring with left/right relabeling,
//!   and fold detection via Jacobian determinant maps.
//! * [`registration`] — similarity pre-alignment and multiscale B-spline
//!   deformable registration under a bone-masked MSE loss.
//! * [`model`] — PCA deformation models: fitting, seeded sampling, and
//!   synthesis of labelled volume pairs.
//! * [`patch`] — seeded uniform and class-balanced patch origin sampling.
//! * [`metrics`] — many-class Dice evaluation and summaries, plus the
//!   cross-entropy + soft-Dice training loss.
//! * [`pipeline`] — the batch driver tying the stages together with a
//!   hashed artifact manifest.
//! * [`io`] — the on-disk volume/model/swap-table formats.

pub mod error;
pub mod flip;
pub mod interp;
pub mod io;
pub mod jacobian;
pub mod metrics;
pub mod model;
pub mod patch;
pub mod pipeline;
pub mod registration;
pub mod resample;
pub mod rng;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
