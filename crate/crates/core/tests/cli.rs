use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splitquant::ir::load_model;

fn splitquant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitquant"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn toml_of(o: &Output) -> toml::Table {
    stdout(o).parse().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small outlier model with a teacher dataset into `dir`.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let (model, data) = (dir.join("m.toml"), dir.join("d.toml"));
    stdout(&splitquant(&[
        "generate",
        "--out",
        s(&model),
        "--seed",
        "3",
        "--width",
        "16",
        "--dataset",
        s(&data),
        "--samples",
        "64",
    ]));
    (model, data)
}

fn accuracy(model: &Path, data: &Path) -> f64 {
    let t = toml_of(&splitquant(&["eval", s(model), "--dataset", s(data), "--fp32"]));
    t["metrics"]["accuracy"].as_float().unwrap()
}

#[test]
fn transform_with_everything_off_keeps_the_blob() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = fixture(dir.path());
    let out = dir.path().join("same.toml");
    stdout(&splitquant(&[
        "transform",
        s(&model),
        "--out",
        s(&out),
        "--no-split-weights",
        "--no-split-activations",
        "--no-fold-batchnorm",
    ]));
    let a = std::fs::read(model.with_extension("bin")).unwrap();
    let b = std::fs::read(out.with_extension("bin")).unwrap();
    assert_eq!(a, b);
    assert_eq!(load_model(&model).unwrap(), load_model(&out).unwrap());
}

#[test]
fn transform_keeps_fp32_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = fixture(dir.path());
    let out = dir.path().join("split.toml");
    let report: toml::Table = stdout(&splitquant(&["transform", s(&model), "--out", s(&out)]))
        .parse()
        .unwrap();
    assert!(report["layers_after"].as_integer() > report["layers_before"].as_integer());
    assert_eq!(report["config"]["split_weights"].as_bool(), Some(true));
    assert_eq!(accuracy(&model, &data), 1.0);
    assert_eq!(accuracy(&out, &data), 1.0);
}

#[test]
fn missing_model_is_an_io_error_naming_the_path() {
    let o = splitquant(&["inspect", "/nonexistent/model.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/model.toml"));
}

#[test]
fn unparsable_manifest_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = ").unwrap();
    assert_eq!(splitquant(&["inspect", s(&bad)]).status.code(), Some(4));
}

#[test]
fn quantize_resolution_grows_with_bits() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = fixture(dir.path());
    let sqnr = |bits: &str| {
        let t = toml_of(&splitquant(&[
            "quantize",
            s(&model),
            "--dataset",
            s(&data),
            "--bits",
            bits,
        ]));
        assert_eq!(t["bits"].as_integer().map(|b| b.to_string()).as_deref(), Some(bits));
        t["metrics"]["sqnr_db"].as_float().unwrap()
    };
    assert!(sqnr("8") > sqnr("2"));
}

#[test]
fn unsupported_bits_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = fixture(dir.path());
    let o = splitquant(&["quantize", s(&model), "--dataset", s(&data), "--bits", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dataset_path_excludes_teacher_generation() {
    let o = splitquant(&["eval", "m.toml", "--dataset", "d.toml", "--teacher-seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn teacher_labels_give_full_fp32_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = fixture(dir.path());
    let t = toml_of(&splitquant(&[
        "eval",
        s(&model),
        "--teacher-seed",
        "9",
        "--samples",
        "32",
        "--fp32",
    ]));
    assert_eq!(t["metrics"]["accuracy"].as_float(), Some(1.0));
    assert_eq!(t["mode"].as_str(), Some("fp32"));
}

fn experiment(seeds: &str) -> toml::Table {
    toml_of(&splitquant(&[
        "experiment",
        "--seeds",
        seeds,
        "--bits",
        "2,4,8",
        "--width",
        "16",
        "--samples",
        "64",
        "--toml",
    ]))
}

#[test]
fn experiment_table_has_a_row_per_bit_width() {
    let t = experiment("4");
    let rows = t["table"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for (row, bits) in rows.iter().zip([2, 4, 8]) {
        assert_eq!(row["bits"].as_integer(), Some(bits));
        let (base, split) = (
            row["acc_baseline"].as_float().unwrap(),
            row["acc_splitquant"].as_float().unwrap(),
        );
        assert_eq!(row["diff"].as_float(), Some(split - base));
    }
}

#[test]
fn duplicate_seeds_repeat_their_rows() {
    let t = experiment("5,5");
    let runs = t["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    assert_eq!(runs[..3], runs[3..]);
}

#[test]
fn empty_bit_list_is_an_argument_error() {
    assert_eq!(splitquant(&["experiment", "--bits", ""]).status.code(), Some(2));
}

#[test]
fn config_file_sets_the_quantizer() {
    let dir = tempfile::tempdir().unwrap();
    let (model, data) = fixture(dir.path());
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[quant]\nqmin = -10\nqmax = 10\nweights_only = true\n").unwrap();
    let t = toml_of(&splitquant(&[
        "quantize",
        s(&model),
        "--dataset",
        s(&data),
        "--config",
        s(&cfg),
    ]));
    assert_eq!(t["mode"].as_str(), Some("weights_only"));
    assert_eq!(t["quant"]["qmin"].as_integer(), Some(-10));
    assert_eq!(t["quant"]["qmax"].as_integer(), Some(10));
}
