//! `ossify` — command-line front end for the volumetric CT toolkit.
//!
//! Exit codes: 0 on success, 2 when an input fails validation (bad
//! arguments, malformed files, mismatched grids, no bone content), 1 for
//! any other failure (I/O trouble, diverged optimisation).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ossify::flip::sagittal_flip_relabel;
use ossify::metrics::{class_scores, summarize, DiceReduction, DICE_EPSILON};
use ossify::model::{build_deformation_model, sample_weights, synthesize_sample};
use ossify::patch::{uniform_patch, BalancedSampler, PatchSpec};
use ossify::pipeline::{run_pipeline, PipelineConfig};
use ossify::registration::{bspline_register_multiscale, similarity_register, RegistrationConfig};
use ossify::{io, Error, Result};

#[derive(Parser)]
#[command(
    name = "ossify",
    version,
    about = "Volumetric CT toolkit: registration, deformation models, synthetic data, patches, metrics"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving scan onto a fixed scan and write the displacement field.
    Register {
        /// Fixed (target) scan.
        #[arg(long, value_name = "F.svol")]
        fixed: PathBuf,
        /// Moving scan to align.
        #[arg(long, value_name = "M.svol")]
        moving: PathBuf,
        /// Registration settings (JSON).
        #[arg(long, value_name = "reg.json")]
        config: PathBuf,
        /// Output displacement field.
        #[arg(long, value_name = "field.svol")]
        out: PathBuf,
    },
    /// Fit a deformation model to every field in a directory.
    BuildModel {
        /// Directory of displacement fields (*.svol).
        #[arg(long, value_name = "DIR")]
        fields: PathBuf,
        /// Number of principal components to retain.
        #[arg(long, value_name = "K")]
        n_components: usize,
        /// Output model file.
        #[arg(long, value_name = "model.sdm")]
        out: PathBuf,
    },
    /// Draw synthetic scan/label pairs from a deformation model.
    Sample {
        /// Deformation model.
        #[arg(long, value_name = "model.sdm")]
        model: PathBuf,
        /// Reference scan to deform.
        #[arg(long, value_name = "S.svol")]
        ref_scan: PathBuf,
        /// Reference labels to deform alongside the scan.
        #[arg(long, value_name = "L.svol")]
        ref_labels: PathBuf,
        /// Number of samples to draw.
        #[arg(long, value_name = "N")]
        n: usize,
        /// Seed of the first sample; sample i uses seed + i.
        #[arg(long, value_name = "S")]
        seed: u64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Mirror a scan/label pair along the sagittal axis, swapping paired labels.
    Flip {
        /// Scan to mirror.
        #[arg(long, value_name = "S.svol")]
        scan: PathBuf,
        /// Labels to mirror and relabel.
        #[arg(long, value_name = "L.svol")]
        labels: PathBuf,
        /// CSV of left/right label id pairs.
        #[arg(long, value_name = "T.csv")]
        swap_table: PathBuf,
        /// Output prefix; writes <prefix>_scan.svol and <prefix>_labels.svol.
        #[arg(long, value_name = "P")]
        out_prefix: String,
    },
    /// Draw patch origins from a label volume and write them as JSON lines.
    Patches {
        /// Label volume to sample from.
        #[arg(long, value_name = "L.svol")]
        labels: PathBuf,
        /// Cubic edge length, or three comma-separated extents (e.g. 96,96,64).
        #[arg(long, value_name = "SIZE", value_parser = parse_size)]
        size: [usize; 3],
        /// Sampling strategy.
        #[arg(long, value_enum)]
        mode: PatchMode,
        /// Number of patches to draw.
        #[arg(long, value_name = "N")]
        n: usize,
        /// Seed of the first draw; draw i uses seed + i.
        #[arg(long, value_name = "S")]
        seed: u64,
        /// Output JSON-lines file.
        #[arg(long, value_name = "P.jsonl")]
        out: PathBuf,
    },
    /// Score a predicted segmentation against ground truth.
    Evaluate {
        /// Predicted label volume.
        #[arg(long, value_name = "P.svol")]
        pred: PathBuf,
        /// Ground-truth label volume.
        #[arg(long, value_name = "G.svol")]
        gt: PathBuf,
        /// Output report (JSON).
        #[arg(long, value_name = "R.json")]
        report: PathBuf,
        /// Exclude zero Dice scores from the summary statistics.
        #[arg(long)]
        drop_zeros: bool,
        /// How per-class soft Dice terms are reduced (recorded in the report).
        #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
        dice_reduction: ReductionArg,
    },
    /// Run the full register → model → sample workflow from a config file.
    Pipeline {
        /// Pipeline configuration (JSON).
        #[arg(long, value_name = "C.json")]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PatchMode {
    Uniform,
    Balanced,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

impl From<ReductionArg> for DiceReduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::Mean => DiceReduction::Mean,
            ReductionArg::Sum => DiceReduction::Sum,
        }
    }
}

/// Accept `128` (cubic) or `a,b,c`; `x` also works as a separator.
fn parse_size(text: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = text.split([',', 'x']).collect();
    let parse_one = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| format!("invalid patch extent {s:?}"))
    };
    match parts.as_slice() {
        [one] => {
            let e = parse_one(one)?;
            Ok([e, e, e])
        }
        [a, b, c] => Ok([parse_one(a)?, parse_one(b)?, parse_one(c)?]),
        _ => Err("size must be one extent or three (e.g. 128 or 96,96,64)".into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Register { fixed, moving, config, out } => {
            let fixed = io::read_scan(&fixed)?;
            let moving = io::read_scan(&moving)?;
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let cfg = RegistrationConfig::from_json(&text)?;
            let init = similarity_register(&fixed, &moving, &cfg)?;
            let field = bspline_register_multiscale(&fixed, &moving, &init, &cfg)?;
            ensure_parent_dir(&out)?;
            io::write_field(&out, &field)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::BuildModel { fields, n_components, out } => {
            let paths = field_paths(&fields)?;
            let mut loaded = Vec::with_capacity(paths.len());
            for p in &paths {
                loaded.push(io::read_field(p)?);
            }
            let model = build_deformation_model(&loaded, n_components)?;
            ensure_parent_dir(&out)?;
            io::write_model(&out, &model)?;
            println!(
                "wrote {} ({} components from {} fields)",
                out.display(),
                model.n_components(),
                loaded.len()
            );
            Ok(())
        }
        Command::Sample { model, ref_scan, ref_labels, n, seed, out } => {
            let model = io::read_model(&model)?;
            let scan = io::read_scan(&ref_scan)?;
            let labels = io::read_labels(&ref_labels)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for i in 0..n {
                let draw_seed = seed.wrapping_add(i as u64);
                let weights = sample_weights(&model, draw_seed);
                warn_extreme_weights(i, &weights, &model.eigenvalues);
                let (s, l) = synthesize_sample(&model, &scan, &labels, &weights)?;
                io::write_scan(out.join(format!("sample_{i:04}_scan.svol")), &s)?;
                io::write_labels(out.join(format!("sample_{i:04}_labels.svol")), &l)?;
            }
            println!("wrote {n} sample pairs to {}", out.display());
            Ok(())
        }
        Command::Flip { scan, labels, swap_table, out_prefix } => {
            let scan = io::read_scan(&scan)?;
            let labels = io::read_labels(&labels)?;
            let table = io::read_swap_table(&swap_table)?;
            let (fs_scan, fs_labels) = sagittal_flip_relabel(&scan, &labels, &table)?;
            let scan_path = PathBuf::from(format!("{out_prefix}_scan.svol"));
            let labels_path = PathBuf::from(format!("{out_prefix}_labels.svol"));
            ensure_parent_dir(&scan_path)?;
            io::write_scan(&scan_path, &fs_scan)?;
            io::write_labels(&labels_path, &fs_labels)?;
            println!("wrote {} and {}", scan_path.display(), labels_path.display());
            Ok(())
        }
        Command::Patches { labels, size, mode, n, seed, out } => {
            let labels = io::read_labels(&labels)?;
            let balanced = match mode {
                PatchMode::Uniform => None,
                PatchMode::Balanced => Some(BalancedSampler::new(&labels)?),
            };
            let mut lines = String::new();
            for i in 0..n {
                let draw_seed = seed.wrapping_add(i as u64);
                let spec = match &balanced {
                    None => uniform_patch(labels.dims, size, draw_seed)?,
                    Some(sampler) => sampler.draw(size, draw_seed)?,
                };
                lines.push_str(&record_line(&spec, draw_seed)?);
                lines.push('\n');
            }
            ensure_parent_dir(&out)?;
            fs::write(&out, lines).map_err(|e| Error::io(&out, e))?;
            println!("wrote {n} patch records to {}", out.display());
            Ok(())
        }
        Command::Evaluate { pred, gt, report, drop_zeros, dice_reduction } => {
            let pred = io::read_labels(&pred)?;
            let gt = io::read_labels(&gt)?;
            let scores = class_scores(&pred, &gt)?;
            let values: Vec<f64> = scores.dsc_per_class.values().copied().collect();
            let summary = summarize(&values, drop_zeros)?;
            let reduction = match DiceReduction::from(dice_reduction) {
                DiceReduction::Mean => "mean",
                DiceReduction::Sum => "sum",
            };
            let body = serde_json::json!({
                "per_class": scores.dsc_per_class,
                "dsc_fg": scores.dsc_fg,
                "detection_ratio": scores.detection_ratio,
                "summary": {
                    "median": summary.median,
                    "lo16": summary.lower_16,
                    "hi84": summary.upper_84,
                },
                "config": {
                    "epsilon": DICE_EPSILON,
                    "dice_reduction": reduction,
                },
            });
            let text = serde_json::to_string_pretty(&body)
                .map_err(|e| Error::format(None, format!("report serialization: {e}")))?;
            ensure_parent_dir(&report)?;
            fs::write(&report, text + "\n").map_err(|e| Error::io(&report, e))?;
            println!("wrote {}", report.display());
            Ok(())
        }
        Command::Pipeline { config } => {
            let cfg = PipelineConfig::from_file(&config)?;
            run_pipeline(&cfg)?;
            println!("pipeline complete: {}", Path::new(&cfg.output_dir).join("manifest.json").display());
            Ok(())
        }
    }
}

/// One JSON-lines record for a drawn patch.
fn record_line(spec: &PatchSpec, seed: u64) -> Result<String> {
    serde_json::to_string(&serde_json::json!({
        "origin": spec.origin,
        "size": spec.size,
        "guaranteed_class": spec.guaranteed_class,
        "seed": seed,
    }))
    .map_err(|e| Error::format(None, format!("patch record serialization: {e}")))
}

/// Sorted displacement-field paths (*.svol) under `dir`.
fn field_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "svol") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .svol fields found in {}",
            dir.display()
        )));
    }
    paths.sort();
    Ok(paths)
}

/// Flag statistically extreme draws; they are legitimate but worth noticing.
fn warn_extreme_weights(sample: usize, weights: &[f64], eigenvalues: &[f64]) {
    for (k, (&w, &lambda)) in weights.iter().zip(eigenvalues).enumerate() {
        if lambda > 0.0 && w.abs() > 3.0 * lambda.sqrt() {
            eprintln!(
                "warning: sample {sample} component {k} drew {:.2} standard deviations from the mean",
                w / lambda.sqrt()
            );
        }
    }
}

fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
