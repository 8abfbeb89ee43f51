//! End-to-end orchestration: register every subject to a reference pair,
//! build a deformation model from the recovered fields, and synthesize
//! labelled training samples — with a content-hashed manifest describing
//! every artifact written.
//!
//! The flow is deterministic given the config: registrations of distinct
//! subjects run as independent parallel jobs, sample synthesis is seeded
//! per sample, the manifest is sorted by path and contains no timestamps,
//! so re-running the same config produces bit-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_labels, read_model, read_scan, write_field, write_labels, write_model, write_scan};
use crate::model::{build_deformation_model, sample_weights, synthesize_sample};
use crate::registration::{bspline_register_multiscale, similarity_register, RegistrationConfig};
use crate::resample::{resample_labels, resample_scalar, SampleMode};
use crate::volume::{check_same_grid, DeformationField, LabelVolume, ScalarVolume};

/// A scan file together with its label file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPair {
    pub scan: String,
    pub labels: String,
}

/// Configuration for [`run_pipeline`].
///
/// `reference_path` is the labelled pair every other scan is registered to
/// and the pair that sampled fields deform during synthesis.
/// `labelled_paths` holds the *additional* labelled pairs (may be empty);
/// `unlabelled_paths` holds scans without labels, which contribute their
/// deformation fields to the model but are never synthesis sources.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub reference_path: ScanPair,
    #[serde(default)]
    pub labelled_paths: Vec<ScanPair>,
    #[serde(default)]
    pub unlabelled_paths: Vec<String>,
    pub target_spacing_mm: [f64; 3],
    #[serde(default)]
    pub registration: RegistrationConfig,
    pub n_components: usize,
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: String,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "target_spacing_mm must be positive, got {:?}",
                self.target_spacing_mm
            )));
        }
        if self.n_components == 0 {
            return Err(Error::InvalidArgument("n_components must be at least 1".into()));
        }
        if self.output_dir.is_empty() {
            return Err(Error::InvalidArgument("output_dir must not be empty".into()));
        }
        self.registration.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::format(None, format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(Some(path.to_path_buf()), format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One entry in the manifest's artifact list.
#[derive(Debug, Clone, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn stage_err<T>(stage: &str, input: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.to_string(),
        input: input.to_string(),
        source: Box::new(e),
    })
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scan".to_string())
}

/// Run the full workflow.  Returns the manifest (also written to
/// `output_dir/manifest.json`).  On a stage failure the partial outputs are
/// kept, a manifest with `"status": "failed"` and the failing stage is
/// still written, and the stage error is returned.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<serde_json::Value> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    for sub in ["fields", "samples"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.clone(), e))?;
    }

    let mut artifacts = Vec::new();
    let outcome = run_stages(cfg, &out, &mut artifacts);

    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = match &outcome {
        Ok(()) => serde_json::json!({
            "status": "ok",
            "config": cfg,
            "artifacts": artifacts,
        }),
        Err(e) => {
            let error_entry = match e {
                Error::Stage { stage, input, source } => serde_json::json!({
                    "stage": stage,
                    "input": input,
                    "message": source.to_string(),
                }),
                other => serde_json::json!({ "message": other.to_string() }),
            };
            serde_json::json!({
                "status": "failed",
                "config": cfg,
                "artifacts": artifacts,
                "error": error_entry,
            })
        }
    };

    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .expect("manifest is built from serializable parts");
    let write_result =
        fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(manifest_path, e));

    outcome?;
    write_result?;
    Ok(manifest)
}

fn run_stages(cfg: &PipelineConfig, out: &Path, artifacts: &mut Vec<Artifact>) -> Result<()> {
    // Load and resample the reference pair.
    let stage = "load-reference";
    let ref_scan = stage_err(stage, &cfg.reference_path.scan, read_scan(&cfg.reference_path.scan))?;
    let ref_labels =
        stage_err(stage, &cfg.reference_path.labels, read_labels(&cfg.reference_path.labels))?;
    stage_err(
        stage,
        &cfg.reference_path.scan,
        check_same_grid(
            "reference pair",
            ref_scan.dims,
            ref_scan.spacing_mm,
            ref_labels.dims,
            ref_labels.spacing_mm,
        ),
    )?;
    let ref_scan: ScalarVolume = stage_err(
        stage,
        &cfg.reference_path.scan,
        resample_scalar(&ref_scan, cfg.target_spacing_mm, SampleMode::Trilinear),
    )?;
    let ref_labels: LabelVolume = stage_err(
        stage,
        &cfg.reference_path.labels,
        resample_labels(&ref_labels, cfg.target_spacing_mm, SampleMode::Nearest),
    )?;

    // Register every other scan (labelled and unlabelled alike) to the
    // reference as independent parallel jobs.
    let subject_paths: Vec<String> = cfg
        .labelled_paths
        .iter()
        .map(|p| p.scan.clone())
        .chain(cfg.unlabelled_paths.iter().cloned())
        .collect();

    let results: Vec<Result<(String, DeformationField)>> = subject_paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let scan = read_scan(path)?;
            let scan = resample_scalar(&scan, cfg.target_spacing_mm, SampleMode::Trilinear)?;
            let init = similarity_register(&ref_scan, &scan, &cfg.registration)?;
            let field = bspline_register_multiscale(&ref_scan, &scan, &init, &cfg.registration)?;
            let rel = format!("fields/field_{i:03}_{}.svol", file_stem(path));
            write_field(out.join(&rel), &field)?;
            Ok((rel, field))
        })
        .collect();

    let mut fields = Vec::with_capacity(results.len());
    let mut first_failure: Option<Error> = None;
    for (path, result) in subject_paths.iter().zip(results) {
        match result {
            Ok((rel, field)) => {
                artifacts.push(Artifact {
                    sha256: sha256_hex(&out.join(&rel))?,
                    path: rel,
                    kind: "field",
                    source: Some(path.clone()),
                    seed: None,
                });
                fields.push(field);
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(Error::Stage {
                        stage: "register".into(),
                        input: path.clone(),
                        source: Box::new(e),
                    });
                }
            }
        }
    }
    if let Some(e) = first_failure {
        return Err(e);
    }

    // Build the deformation model from all fields and persist it.
    let model_rel = "model.sdm";
    let model_path = out.join(model_rel);
    let fields_input = out.join("fields").display().to_string();
    let model = stage_err(
        "build-model",
        &fields_input,
        build_deformation_model(&fields, cfg.n_components),
    )?;
    stage_err("build-model", &fields_input, write_model(&model_path, &model))?;
    artifacts.push(Artifact {
        path: model_rel.to_string(),
        sha256: sha256_hex(&model_path)?,
        kind: "model",
        source: None,
        seed: None,
    });

    // Synthesize samples from the *persisted* model, so the pipeline's
    // outputs are the same as running the standalone sampling command on
    // model.sdm.
    let model_input = model_path.display().to_string();
    let model = stage_err("sample", &model_input, read_model(&model_path))?;
    let sample_results: Vec<Result<[(String, u64); 2]>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let weights = sample_weights(&model, seed);
            let (scan, labels) = synthesize_sample(&model, &ref_scan, &ref_labels, &weights)?;
            let scan_rel = format!("samples/sample_{i:04}_scan.svol");
            let labels_rel = format!("samples/sample_{i:04}_labels.svol");
            write_scan(out.join(&scan_rel), &scan)?;
            write_labels(out.join(&labels_rel), &labels)?;
            Ok([(scan_rel, seed), (labels_rel, seed)])
        })
        .collect();
    let mut first_failure: Option<Error> = None;
    for result in sample_results {
        match result {
            Ok(pair) => {
                for (rel, seed) in pair {
                    artifacts.push(Artifact {
                        sha256: sha256_hex(&out.join(&rel))?,
                        kind: if rel.ends_with("_scan.svol") { "sample_scan" } else { "sample_labels" },
                        path: rel,
                        source: None,
                        seed: Some(seed),
                    });
                }
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(Error::Stage {
                        stage: "sample".into(),
                        input: model_input.clone(),
                        source: Box::new(e),
                    });
                }
            }
        }
    }
    if let Some(e) = first_failure {
        return Err(e);
    }
    Ok(())
}
