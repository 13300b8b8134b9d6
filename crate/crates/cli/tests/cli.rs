//! End-to-end tests of the `kbench` binary: subcommand wiring, exit codes,
//! artifact layout. Numerical behavior is covered in the core crate.

use std::path::Path;
use std::process::{Command, Output};

fn kbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbench"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn kbench")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("exit code");
    assert_eq!(
        got,
        want,
        "exit {got}, wanted {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_phantom_mask_recon_segment_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = kbench(
        &[
            "phantom", "--n", "1", "--shape", "48x48", "--coils", "3", "--seed", "5", "--out",
            "ds",
        ],
        d,
    );
    assert_code(&out, 0);
    assert!(d.join("ds/case_0000/gt_image/meta.json").is_file());
    assert!(d.join("ds/case_0000/kspace/data.bin").is_file());

    let out = kbench(
        &[
            "mask", "--shape", "48x48", "--accel", "4", "--acs", "10", "--seed", "2", "--out",
            "m",
        ],
        d,
    );
    assert_code(&out, 0);

    let out = kbench(
        &[
            "recon",
            "--case",
            "ds/case_0000",
            "--mask",
            "m",
            "--method",
            "zero_filled",
            "--out",
            "rec",
        ],
        d,
    );
    assert_code(&out, 0);

    let out = kbench(&["segment", "--image", "rec", "--out", "seg"], d);
    assert_code(&out, 0);

    let out = kbench(
        &[
            "eval",
            "--recon",
            "rec",
            "--gt-image",
            "ds/case_0000/gt_image",
            "--pred-seg",
            "seg",
            "--gt-seg",
            "ds/case_0000/gt_seg",
            "--out",
            "row.json",
        ],
        d,
    );
    assert_code(&out, 0);
    let row: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("row.json")).unwrap()).unwrap();
    let dice = row["mean_dice"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&dice), "mean_dice {dice}");
    assert!(row["ssim"].as_f64().is_some());
}

fn write_bench_config(d: &Path, output_dir: &str) {
    let cfg = serde_json::json!({
        "schema_version": 1,
        "dataset": {"type": "phantom", "n": 3, "shape": [48, 48], "coils": 3, "seed": 9},
        "accels": [4.0],
        "methods": [{"method": "zero_filled"}],
        "segmenter": {"type": "threshold", "bands": [
            {"label": 1, "name": "shell", "lo": 0.83, "hi": 0.97},
            {"label": 2, "name": "tissue", "lo": 0.13, "hi": 0.27},
            {"label": 3, "name": "ventricle", "lo": 0.28, "hi": 0.42},
            {"label": 4, "name": "mass", "lo": 0.43, "hi": 0.57},
            {"label": 5, "name": "lesion", "lo": 0.63, "hi": 0.77}
        ]},
        "baseline_method": "zero_filled",
        "output_dir": output_dir
    });
    std::fs::write(d.join("bench.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn bench_stats_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_bench_config(d, "run");

    let out = kbench(&["bench", "--config", "bench.json", "--threads", "2"], d);
    assert_code(&out, 0);
    for f in [
        "report.json",
        "per_case.csv",
        "dice_vs_accel.csv",
        "ssim_vs_accel.csv",
        "psnr_vs_dice_scatter.csv",
    ] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }

    // Re-rendering from report.json must reproduce every artifact byte for byte.
    let out = kbench(&["report", "--run", "run", "--out", "run2"], d);
    assert_code(&out, 0);
    for f in [
        "report.json",
        "per_case.csv",
        "dice_vs_accel.csv",
        "ssim_vs_accel.csv",
        "psnr_vs_dice_scatter.csv",
    ] {
        let a = std::fs::read(d.join("run").join(f)).unwrap();
        let b = std::fs::read(d.join("run2").join(f)).unwrap();
        assert_eq!(a, b, "{f} changed under re-render");
    }

    let out = kbench(
        &[
            "stats",
            "--csv",
            "run/per_case.csv",
            "--test",
            "wilcoxon",
            "--baseline",
            "zero_filled",
            "--candidate",
            "zero_filled",
        ],
        d,
    );
    assert_code(&out, 0);
    let json: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    // Method compared against itself: every difference is zero.
    assert_eq!(json["all_zero"], serde_json::json!(true));
    assert_eq!(json["p_value"], serde_json::json!(1.0));

    let out = kbench(
        &[
            "stats",
            "--csv",
            "run/per_case.csv",
            "--test",
            "spearman",
            "--method",
            "zero_filled",
        ],
        d,
    );
    assert_code(&out, 0);
    let json: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert!(json["rho"].as_f64().unwrap().abs() <= 1.0 + 1e-12);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Unknown subcommand (clap) and bad argument values both exit 2.
    assert_code(&kbench(&["frobnicate"], d), 2);
    assert_code(
        &kbench(&["mask", "--shape", "banana", "--accel", "4", "--out", "m"], d),
        2,
    );
    assert_code(
        &kbench(&["bench", "--config", "missing.json"], d),
        2,
    );

    // Config with wrong schema version is rejected before any work happens.
    std::fs::write(d.join("bad.json"), r#"{"schema_version": 99}"#).unwrap();
    assert_code(&kbench(&["bench", "--config", "bad.json"], d), 2);

    assert_code(
        &kbench(
            &[
                "recon", "--case", "nope", "--mask", "nope", "--method", "sorcery", "--out", "r",
            ],
            d,
        ),
        2,
    );
}

#[test]
fn eval_shape_mismatch_names_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, shape, seed) in [("a", "48x48", 1), ("b", "64x64", 2)] {
        let out = kbench(
            &[
                "phantom",
                "--n",
                "1",
                "--shape",
                shape,
                "--coils",
                "2",
                "--seed",
                &seed.to_string(),
                "--out",
                name,
            ],
            d,
        );
        assert_code(&out, 0);
    }
    let out = kbench(
        &[
            "eval",
            "--recon",
            "a/case_0000/gt_image",
            "--gt-image",
            "b/case_0000/gt_image",
            "--pred-seg",
            "a/case_0000/gt_seg",
            "--gt-seg",
            "b/case_0000/gt_seg",
        ],
        d,
    );
    assert_code(&out, 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("a/case_0000/gt_image") && err.contains("b/case_0000/gt_image"),
        "stderr does not name both files: {err}"
    );
}
