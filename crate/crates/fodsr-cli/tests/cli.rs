//! End-to-end CLI contract tests: file outputs, exit codes, and re-run
//! determinism with fixed seeds.

use std::path::Path;
use std::process::{Command, Output};

fn fodsr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fodsr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// history.csv minus its wall-time column (timestamps excluded from
/// determinism comparisons).
fn history_without_seconds(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells[..cells.len().saturating_sub(1)].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn help_lists_every_subcommand_and_flags() {
    let tmp = tempfile::TempDir::new().unwrap();
    let out = fodsr(&["--help"], tmp.path());
    assert_ok(&out, "--help");
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "phantom-gen",
        "train",
        "infer",
        "eval",
        "acc-map",
        "identity-ckpt",
    ] {
        assert!(text.contains(cmd), "--help missing {cmd}");
    }
    // each subcommand help lists its flags with defaults
    let out = fodsr(&["infer", "--help"], tmp.path());
    assert_ok(&out, "infer --help");
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--input", "--ckpt", "--out", "--overlap", "--mask", "--blend"] {
        assert!(text.contains(flag), "infer --help missing {flag}");
    }
    assert!(text.contains("0.25"), "overlap default not shown");
}

#[test]
fn unknown_flag_is_usage_error_code_2() {
    let tmp = tempfile::TempDir::new().unwrap();
    let out = fodsr(&["infer", "--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_is_code_1() {
    let tmp = tempfile::TempDir::new().unwrap();
    let out = fodsr(
        &[
            "infer",
            "--input",
            "missing.nii",
            "--ckpt",
            "missing.ckpt",
            "--out",
            "out.nii",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let tmp = tempfile::TempDir::new().unwrap();
    let cwd = tmp.path();

    for round in ["a", "b"] {
        let ph = format!("{round}/ph");
        let run = format!("{round}/run");
        assert_ok(
            &fodsr(
                &["phantom-gen", "--dims", "16", "--seed", "7", "--out", &ph],
                cwd,
            ),
            "phantom-gen",
        );
        assert_ok(
            &fodsr(
                &[
                    "train",
                    "--data",
                    &ph,
                    "--out",
                    &run,
                    "--epochs",
                    "2",
                    "--patches-per-epoch",
                    "4",
                    "--val-patches",
                    "2",
                    "--patch",
                    "8",
                    "--embed",
                    "8",
                    "--window",
                    "4",
                    "--depths",
                    "1,1",
                    "--heads",
                    "2,2",
                    "--mlp-ratio",
                    "2",
                    "--seed",
                    "3",
                ],
                cwd,
            ),
            "train",
        );
        assert_ok(
            &fodsr(
                &[
                    "infer",
                    "--input",
                    &format!("{ph}/input.nii"),
                    "--ckpt",
                    &format!("{run}/best.ckpt"),
                    "--out",
                    &format!("{round}/sr.nii"),
                    "--overlap",
                    "0.25",
                ],
                cwd,
            ),
            "infer",
        );
        assert_ok(
            &fodsr(
                &[
                    "eval",
                    "--pred",
                    &format!("{round}/sr.nii"),
                    "--reference",
                    &format!("{ph}/target.nii"),
                    "--masks",
                    &ph,
                    "--out",
                    &format!("{round}/report.csv"),
                ],
                cwd,
            ),
            "eval",
        );
        assert_ok(
            &fodsr(
                &[
                    "acc-map",
                    "--pred",
                    &format!("{round}/sr.nii"),
                    "--reference",
                    &format!("{ph}/target.nii"),
                    "--masks",
                    &ph,
                    "--out",
                    &format!("{round}/acc.nii"),
                    "--slice-axis",
                    "z",
                    "--slice-index",
                    "8",
                    "--slice-out",
                    &format!("{round}/slice.pgm"),
                ],
                cwd,
            ),
            "acc-map",
        );
    }

    for file in [
        "ph/target.nii",
        "ph/input.nii",
        "ph/wm.nii",
        "ph/cgm.nii",
        "ph/sgm.nii",
        "run/best.ckpt",
        "sr.nii",
        "report.csv",
        "acc.nii",
        "slice.pgm",
        "slice.csv",
        "slice_mask.pgm",
    ] {
        assert_eq!(
            read(&cwd.join("a").join(file)),
            read(&cwd.join("b").join(file)),
            "{file} differs between identical-seed runs"
        );
    }
    assert_eq!(
        history_without_seconds(&cwd.join("a/run/history.csv")),
        history_without_seconds(&cwd.join("b/run/history.csv")),
        "history (minus wall time) differs"
    );
}

#[test]
fn identity_ckpt_makes_infer_a_no_op() {
    let tmp = tempfile::TempDir::new().unwrap();
    let cwd = tmp.path();
    assert_ok(
        &fodsr(
            &["phantom-gen", "--dims", "16", "--seed", "1", "--out", "ph"],
            cwd,
        ),
        "phantom-gen",
    );
    assert_ok(
        &fodsr(
            &[
                "identity-ckpt",
                "--out",
                "id.ckpt",
                "--patch",
                "8",
                "--embed",
                "8",
                "--window",
                "2",
                "--depths",
                "1,1",
                "--heads",
                "2,2",
            ],
            cwd,
        ),
        "identity-ckpt",
    );
    let out = fodsr(
        &[
            "infer",
            "--input",
            "ph/input.nii",
            "--ckpt",
            "id.ckpt",
            "--out",
            "sr.nii",
        ],
        cwd,
    );
    assert_ok(&out, "infer");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("forward passes:"), "missing pass count: {text}");

    // identity output matches the input within blending tolerance
    let (a, b) = (read(&cwd.join("ph/input.nii")), read(&cwd.join("sr.nii")));
    assert_eq!(a.len(), b.len());
    let payload = 352;
    for i in (payload..a.len()).step_by(4) {
        let va = f32::from_le_bytes(a[i..i + 4].try_into().unwrap());
        let vb = f32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        assert!((va - vb).abs() < 1e-5, "voxel bytes at {i}: {va} vs {vb}");
    }
}

#[test]
fn config_file_precedence_flags_win() {
    let tmp = tempfile::TempDir::new().unwrap();
    let cwd = tmp.path();
    std::fs::write(cwd.join("ph.cfg"), "dims = 12\nseed = 5\nnoise_sigma = 0.5\n").unwrap();
    // flag --seed overrides the file; dims/noise come from the file
    let out = fodsr(
        &[
            "phantom-gen",
            "--config",
            "ph.cfg",
            "--seed",
            "9",
            "--out",
            "ph",
        ],
        cwd,
    );
    assert_ok(&out, "phantom-gen with config");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("dims = 12,12,12"), "{text}");
    assert!(text.contains("seed = 9"), "{text}");
    assert!(text.contains("noise_sigma = 0.5"), "{text}");
}
