//! End-to-end tests against the compiled `ossify` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ossify::io;
use ossify::rng;
use ossify::volume::{LabelVolume, ScalarVolume};
use ossify::warp::warp_scalar;

fn ossify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ossify"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

/// Quadratic-profile blob phantom (see the library's integration suites).
fn phantom(dims: [usize; 3], sp: [f64; 3], blobs: &[([f64; 3], f64)]) -> ScalarVolume {
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]];
                let mut v = -1000.0f64;
                for (c, r) in blobs {
                    let d2 =
                        (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    let q = 1.0 - d2 / (r * r);
                    if q > 0.0 {
                        v += 1500.0 * q;
                    }
                }
                data.push(v as f32);
            }
        }
    }
    ScalarVolume::new(dims, sp, data).unwrap()
}

fn blobs() -> Vec<([f64; 3], f64)> {
    vec![
        ([10.0, 10.0, 11.0], 8.0),
        ([20.0, 20.0, 10.0], 7.0),
        ([11.0, 20.0, 20.0], 7.5),
        ([20.0, 11.0, 19.0], 7.0),
    ]
}

fn labels_for(scan: &ScalarVolume, num_classes: u16) -> LabelVolume {
    let data = scan
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v > 100.0 { 1 + (i % (num_classes as usize - 1)) as u16 } else { 0 })
        .collect();
    LabelVolume::new(scan.dims, scan.spacing_mm, num_classes, data).unwrap()
}

fn smooth_field(
    dims: [usize; 3],
    sp: [f64; 3],
    amp: f64,
    seed: u64,
) -> ossify::volume::DeformationField {
    let mut grid =
        ossify::registration::BSplineGrid::new_for_domain(dims, sp, [12.0; 3]).unwrap();
    for (i, c) in grid.coefficients.iter_mut().enumerate() {
        for (a, slot) in c.iter_mut().enumerate() {
            *slot = (amp * rng::normal(seed, (3 * i + a) as u64)).clamp(-amp, amp);
        }
    }
    grid.densify(dims, sp).unwrap()
}

#[test]
fn register_build_model_sample_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let dims = [16; 3];
    let sp = [2.0; 3];
    let fixed = phantom(dims, sp, &blobs());
    io::write_scan(dir.join("fixed.svol"), &fixed).unwrap();
    io::write_labels(dir.join("fixed_labels.svol"), &labels_for(&fixed, 4)).unwrap();

    for k in 0..2u64 {
        let field = smooth_field(dims, sp, 1.2, 40 + k);
        let moving = warp_scalar(&fixed, &field, -1000.0).unwrap();
        io::write_scan(dir.join(format!("moving_{k}.svol")), &moving).unwrap();
    }
    fs::write(
        dir.join("reg.json"),
        r#"{"levels":2,"iters_per_level":10,"control_spacing_mm":[16.0,8.0]}"#,
    )
    .unwrap();

    let fields_dir = dir.join("fields");
    fs::create_dir(&fields_dir).unwrap();
    for k in 0..2 {
        let out = ossify(&[
            "register",
            "--fixed",
            path(dir, "fixed.svol").as_str(),
            "--moving",
            path(dir, &format!("moving_{k}.svol")).as_str(),
            "--config",
            path(dir, "reg.json").as_str(),
            "--out",
            fields_dir.join(format!("f{k}.svol")).to_str().unwrap(),
        ]);
        assert_ok(&out);
    }

    let out = ossify(&[
        "build-model",
        "--fields",
        fields_dir.to_str().unwrap(),
        "--n-components",
        "1",
        "--out",
        path(dir, "model.sdm").as_str(),
    ]);
    assert_ok(&out);
    let model = io::read_model(dir.join("model.sdm")).unwrap();
    assert_eq!(model.n_components(), 1);

    let samples_dir = dir.join("samples");
    let out = ossify(&[
        "sample",
        "--model",
        path(dir, "model.sdm").as_str(),
        "--ref-scan",
        path(dir, "fixed.svol").as_str(),
        "--ref-labels",
        path(dir, "fixed_labels.svol").as_str(),
        "--n",
        "2",
        "--seed",
        "3",
        "--out",
        samples_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    for i in 0..2 {
        io::read_scan(samples_dir.join(format!("sample_{i:04}_scan.svol"))).unwrap();
        io::read_labels(samples_dir.join(format!("sample_{i:04}_labels.svol"))).unwrap();
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn flip_twice_restores_files_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scan = phantom([12, 10, 8], [1.0, 1.5, 2.0], &[([6.0, 7.0, 8.0], 5.0)]);
    let labels = labels_for(&scan, 5);
    io::write_scan(dir.join("s.svol"), &scan).unwrap();
    io::write_labels(dir.join("l.svol"), &labels).unwrap();
    fs::write(dir.join("swap.csv"), "left,right\n1,2\n3,4\n").unwrap();

    let once = path(dir, "once");
    let out = ossify(&[
        "flip",
        "--scan", path(dir, "s.svol").as_str(),
        "--labels", path(dir, "l.svol").as_str(),
        "--swap-table", path(dir, "swap.csv").as_str(),
        "--out-prefix", once.as_str(),
    ]);
    assert_ok(&out);

    let twice = path(dir, "twice");
    let out = ossify(&[
        "flip",
        "--scan", format!("{once}_scan.svol").as_str(),
        "--labels", format!("{once}_labels.svol").as_str(),
        "--swap-table", path(dir, "swap.csv").as_str(),
        "--out-prefix", twice.as_str(),
    ]);
    assert_ok(&out);

    let orig = fs::read(dir.join("s.svol")).unwrap();
    let round = fs::read(format!("{twice}_scan.svol")).unwrap();
    assert_eq!(orig, round, "double flip must restore the scan file bitwise");
    let orig = fs::read(dir.join("l.svol")).unwrap();
    let round = fs::read(format!("{twice}_labels.svol")).unwrap();
    assert_eq!(orig, round, "double flip must restore the labels file bitwise");
}

#[test]
fn patch_records_carry_schema_and_sequential_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scan = phantom([16; 3], [2.0; 3], &blobs());
    let labels = labels_for(&scan, 4);
    io::write_labels(dir.join("l.svol"), &labels).unwrap();

    for (mode, expect_class) in [("uniform", false), ("balanced", true)] {
        let out_path = path(dir, &format!("{mode}.jsonl"));
        let out = ossify(&[
            "patches",
            "--labels", path(dir, "l.svol").as_str(),
            "--size", "8,8,4",
            "--mode", mode,
            "--n", "5",
            "--seed", "11",
            "--out", out_path.as_str(),
        ]);
        assert_ok(&out);

        let text = fs::read_to_string(&out_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        for (i, line) in lines.iter().enumerate() {
            let rec: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(rec["seed"].as_u64().unwrap(), 11 + i as u64);
            assert_eq!(rec["size"], serde_json::json!([8, 8, 4]));
            let origin = rec["origin"].as_array().unwrap();
            for (a, max) in origin.iter().zip([8u64, 8, 12]) {
                assert!(a.as_u64().unwrap() <= max, "origin out of bounds: {rec}");
            }
            if expect_class {
                let c = rec["guaranteed_class"].as_u64().expect("balanced draws guarantee") as u16;
                assert!((1..4).contains(&c));
            } else {
                assert!(rec["guaranteed_class"].is_null());
            }
        }
    }
}

#[test]
fn evaluate_report_has_contracted_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scan = phantom([12; 3], [2.0; 3], &[([12.0, 12.0, 12.0], 9.0)]);
    let gt = labels_for(&scan, 3);
    // Prediction: same labels with one class blanked, so scores vary.
    let pred_data = gt.data().iter().map(|&c| if c == 2 { 0 } else { c }).collect();
    let pred = LabelVolume::new(gt.dims, gt.spacing_mm, 3, pred_data).unwrap();
    io::write_labels(dir.join("gt.svol"), &gt).unwrap();
    io::write_labels(dir.join("pred.svol"), &pred).unwrap();

    let report = path(dir, "report.json");
    let out = ossify(&[
        "evaluate",
        "--pred", path(dir, "pred.svol").as_str(),
        "--gt", path(dir, "gt.svol").as_str(),
        "--report", report.as_str(),
    ]);
    assert_ok(&out);

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["per_class"].is_object());
    assert_eq!(doc["per_class"]["1"], serde_json::json!(1.0));
    assert_eq!(doc["per_class"]["2"], serde_json::json!(0.0));
    assert!(doc["dsc_fg"].as_f64().unwrap() > 0.0);
    assert_eq!(doc["detection_ratio"], serde_json::json!(0.5));
    for key in ["median", "lo16", "hi84"] {
        assert!(doc["summary"][key].is_f64(), "summary.{key} missing");
    }
    assert_eq!(doc["config"]["epsilon"], serde_json::json!(1e-5));
    assert_eq!(doc["config"]["dice_reduction"], "mean");

    // --drop-zeros and the reduction switch both land in the report.
    let out = ossify(&[
        "evaluate",
        "--pred", path(dir, "pred.svol").as_str(),
        "--gt", path(dir, "gt.svol").as_str(),
        "--report", report.as_str(),
        "--drop-zeros",
        "--dice-reduction", "sum",
    ]);
    assert_ok(&out);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["config"]["dice_reduction"], "sum");
    assert_eq!(doc["summary"]["median"], serde_json::json!(1.0));
}

#[test]
fn pipeline_subcommand_runs_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let dims = [16; 3];
    let sp = [2.0; 3];
    let ref_scan = phantom(dims, sp, &blobs());
    io::write_scan(dir.join("ref.svol"), &ref_scan).unwrap();
    io::write_labels(dir.join("ref_labels.svol"), &labels_for(&ref_scan, 4)).unwrap();
    for k in 0..2u64 {
        let field = smooth_field(dims, sp, 1.2, 60 + k);
        let moving = warp_scalar(&ref_scan, &field, -1000.0).unwrap();
        io::write_scan(dir.join(format!("m{k}.svol")), &moving).unwrap();
    }

    let out_dir = path(dir, "out");
    let cfg = serde_json::json!({
        "reference_path": {"scan": path(dir, "ref.svol"), "labels": path(dir, "ref_labels.svol")},
        "unlabelled_paths": [path(dir, "m0.svol"), path(dir, "m1.svol")],
        "target_spacing_mm": [2.0, 2.0, 2.0],
        "registration": {"levels": 2, "iters_per_level": 8, "control_spacing_mm": [16.0, 8.0]},
        "n_components": 2,
        "n_samples": 1,
        "seed": 9,
        "output_dir": out_dir,
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();

    let out = ossify(&["--threads", "2", "pipeline", "--config", path(dir, "cfg.json").as_str()]);
    assert_ok(&out);
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(&out_dir).join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["status"], "ok");
}

#[test]
fn exit_codes_distinguish_validation_from_other_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scan = phantom([8; 3], [2.0; 3], &[([8.0, 8.0, 8.0], 6.0)]);
    let a = labels_for(&scan, 3);
    let b_small = phantom([6; 3], [2.0; 3], &[([6.0, 6.0, 6.0], 5.0)]);
    let b = labels_for(&b_small, 3);
    io::write_labels(dir.join("a.svol"), &a).unwrap();
    io::write_labels(dir.join("b.svol"), &b).unwrap();

    // Grid mismatch → validation → exit 2.
    let out = ossify(&[
        "evaluate",
        "--pred", path(dir, "a.svol").as_str(),
        "--gt", path(dir, "b.svol").as_str(),
        "--report", path(dir, "r.json").as_str(),
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Missing input file → I/O → exit 1.
    let out = ossify(&[
        "evaluate",
        "--pred", path(dir, "missing.svol").as_str(),
        "--gt", path(dir, "b.svol").as_str(),
        "--report", path(dir, "r.json").as_str(),
    ]);
    assert_eq!(exit_code(&out), 1, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // Oversized patch → validation → exit 2.
    let out = ossify(&[
        "patches",
        "--labels", path(dir, "a.svol").as_str(),
        "--size", "64",
        "--mode", "uniform",
        "--n", "1",
        "--seed", "0",
        "--out", path(dir, "p.jsonl").as_str(),
    ]);
    assert_eq!(exit_code(&out), 2);

    // Unknown flags are usage errors (clap's own exit code 2).
    let out = ossify(&["evaluate", "--no-such-flag"]);
    assert_eq!(exit_code(&out), 2);

    // Success prints to stdout and exits 0.
    let out = ossify(&[
        "evaluate",
        "--pred", path(dir, "a.svol").as_str(),
        "--gt", path(dir, "a.svol").as_str(),
        "--report", path(dir, "r.json").as_str(),
    ]);
    assert_eq!(exit_code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("r.json"));
}
