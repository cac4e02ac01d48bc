//! End-to-end CLI tests: exit codes, the full synth/train/quantize/eval
//! pipeline at micro scale, and report consistency against the library.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn limuse_bin() -> &'static str {
    env!("CARGO_BIN_EXE_limuse")
}

fn run(args: &[&str]) -> Output {
    Command::new(limuse_bin()).args(args).output().expect("binary runs")
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("limuse_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_micro_config(path: &Path) {
    // a model small enough for CI-speed end-to-end runs
    std::fs::write(
        path,
        "n = 16\nl = 8\ns = 8\nk = 2\nx = 1\nr_a = 1\nr_f = 1\nu = 16\nd_face = 8\n\
         max_epochs = 2\nbatch_size = 2\nseed = 5\n",
    )
    .unwrap();
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = run(&["eval", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_dir_exits_4() {
    let dir = tmpdir("missing_data");
    let cfg = dir.join("cfg.txt");
    write_micro_config(&cfg);
    let ckpt = dir.join("m.ckpt");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        dir.join("nope").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_exits_3() {
    let dir = tmpdir("bad_config");
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "not_a_real_key = 1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        dir.to_str().unwrap(),
        "--out",
        dir.join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_real_key"), "{stderr}");
}

#[test]
fn report_totals_match_library_accounting() {
    let dir = tmpdir("report");
    let cfg = dir.join("cfg.txt");
    // default architecture (hyperparameter-table values)
    std::fs::write(&cfg, "# defaults\n").unwrap();
    let out = run(&[
        "report",
        "--config",
        cfg.to_str().unwrap(),
        "--seconds",
        "3",
        "--csv",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("layer,name,params,macs,bytes\n"));
    let total_line = csv.lines().last().unwrap();
    let total_params: usize = total_line.split(',').nth(2).unwrap().parse().unwrap();

    // library-side count for the same configuration
    let mut store = limuse::nn::ParamStore::new();
    let model =
        limuse::model::LiMuseModel::build(&mut store, &limuse::model::ModelConfig::default(), 0)
            .unwrap();
    let rows = model.layer_rows(&store, 3.0).unwrap();
    let report = limuse::accounting::AccountingReport::new(rows, None, 3.0);
    assert_eq!(total_params, report.total_params());
    assert_eq!(total_params, store.total_values());
}

#[test]
fn full_pipeline_micro() {
    let dir = tmpdir("pipeline");
    let data = dir.join("data");
    // 0.2 s clips, enough samples to run two epochs
    let out = run(&[
        "synth-data",
        "--out",
        data.to_str().unwrap(),
        "--speakers",
        "3",
        "--hours",
        "0.0005",
        "--seed",
        "11",
        "--clip-seconds",
        "0.2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for split in ["train", "val", "test"] {
        assert!(data.join(split).join("manifest.csv").exists(), "missing {split} manifest");
    }

    let cfg = dir.join("cfg.txt");
    write_micro_config(&cfg);
    let ckpt = dir.join("fp.ckpt");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    // evaluation in table and json form
    let out = run(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.join("test").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("SI-SDRi"));
    let out = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.join("test").to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json = String::from_utf8_lossy(&out.stdout);
    assert!(json.trim().starts_with('{') && json.contains("\"si_sdri_mean\""), "{json}");

    // QAT + packed export
    let qckpt = dir.join("q.ckpt");
    let out = run(&[
        "quantize",
        "--from",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        qckpt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(qckpt.exists());
    // packed export is much smaller than the full-precision checkpoint
    let fp_size = std::fs::metadata(&ckpt).unwrap().len();
    let q_size = std::fs::metadata(&qckpt).unwrap().len();
    assert!(q_size < fp_size / 2, "packed {q_size} vs full {fp_size}");

    let out = run(&[
        "eval",
        "--ckpt",
        qckpt.to_str().unwrap(),
        "--data",
        data.join("test").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("quantized: true"));

    // report on the quantized checkpoint prices quantized rows at w_q bits
    let out = run(&["report", "--ckpt", qckpt.to_str().unwrap(), "--seconds", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("G-MACs"));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn eval_missing_checkpoint_exits_4() {
    let dir = tmpdir("missing_ckpt");
    let out = run(&[
        "eval",
        "--ckpt",
        dir.join("none.ckpt").to_str().unwrap(),
        "--data",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
