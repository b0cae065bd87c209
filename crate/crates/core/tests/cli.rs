use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sqnz::metrics::EvalReport;

const CONFIG: &str = r#"{
  "seed": 11,
  "arch": {
    "input_length": 300,
    "conv_layers": [
      {"channels": 4, "kernel_size": 7, "pool_after": true},
      {"channels": 4, "kernel_size": 7, "pool_after": true}
    ],
    "dense_layers": [{"units": 16}, {"units": 4}],
    "n_classes": 4
  },
  "hyperparams": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 12, "patience": 4},
  "prune": {
    "sparsity_steps": [0.5, 0.9],
    "fine_tune_hp": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 3, "patience": 2}
  },
  "qat_hp": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 3, "patience": 2},
  "synth": {"n_per_class": 20, "min_length": 250, "max_length": 350}
}"#;

fn sqnz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqnz")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = sqnz(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, CONFIG).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["synth", "--config", p(&cfg), "--out", p(&b)]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let c = tmp.path().join("c");
    ok(&["synth", "--config", p(&cfg), "--out", p(&c), "--seed", "12"]);
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn exit_codes_and_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "unknown_key": true}"#).unwrap();
    let out = sqnz(&["synth", "--config", p(&cfg), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["error"], "validation");
    assert!(!tmp.path().join("d").exists());

    let out = sqnz(&["infer", "--model", p(&tmp.path().join("missing.sqnz")), "--in", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(sqnz(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let cfg = t.join("c.json");
    fs::write(&cfg, CONFIG).unwrap();
    let c = p(&cfg);
    let data = t.join("data");
    ok(&["synth", "--config", c, "--out", p(&data)]);
    let before = dir_bytes(&data);

    ok(&["preprocess", "--config", c, "--in", p(&data), "--out", p(&t.join("pre"))]);
    let report = fs::read_to_string(t.join("pre/padding_report.csv")).unwrap();
    assert!(report.starts_with("row,A,N,O,~,Total"));
    let split: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.join("pre/split.json")).unwrap()).unwrap();
    assert_eq!(
        split["train"].as_array().unwrap().len() + split["val"].as_array().unwrap().len() + split["test"].as_array().unwrap().len(),
        80
    );

    ok(&["train", "--config", c, "--in", p(&data), "--out", p(&t.join("base"))]);
    let base = t.join("base/model.sqnz");
    ok(&["prune", "--config", c, "--in", p(&base), "--data", p(&data), "--out", p(&t.join("pruned"))]);
    let steps = fs::read_to_string(t.join("pruned/prune_steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 3);
    ok(&["quantize", "--config", c, "--in", p(&t.join("pruned/model.sqnz")), "--data", p(&data), "--out", p(&t.join("quant"))]);
    let quant = t.join("quant/model.sqnz");
    let packed = t.join("packed.sqnz");
    let out = ok(&["pack", "--config", c, "--in", p(&quant), "--out", p(&packed)]);
    let sizes: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(sizes["packed_bytes"].as_u64().unwrap() as usize, fs::metadata(&packed).unwrap().len() as usize);
    assert_eq!(fs::read(&packed).unwrap(), fs::read(&quant).unwrap());

    let base_eval = t.join("baseline.json");
    let opt_eval = t.join("optimised.json");
    ok(&["eval", "--config", c, "--in", p(&base), "--data", p(&data), "--out", p(&base_eval)]);
    ok(&["eval", "--config", c, "--in", p(&packed), "--data", p(&data), "--out", p(&opt_eval)]);
    let shift_eval = t.join("shift.json");
    ok(&["eval", "--config", c, "--in", p(&packed), "--data", p(&data), "--out", p(&shift_eval), "--shift"]);

    // the packed model scores exactly like the in-memory quantized model
    let mem = sqnz::cli::load_model(&quant).unwrap();
    let ds = sqnz::signal_io::load_dataset_dir(&data, sqnz::signal_io::DataSource::Real).unwrap();
    let rc = sqnz::cli::RunConfig::from_json(CONFIG).unwrap();
    let idx = sqnz::preprocess::stratified_split_indices(&ds, &rc.split_spec()).unwrap();
    let test = sqnz::train::prepare_examples::<f32>(&ds.subset(&idx.test), 300);
    let cm = sqnz::train::evaluate(&mem, &test).unwrap().confusion(&test).unwrap();
    let opt = EvalReport::read_json(&opt_eval).unwrap();
    assert_eq!(opt.confusion_matrix, cm);
    assert!(opt.model_sparsity > 0.85);

    let summary = t.join("summary.csv");
    ok(&["report", "--in", p(&base_eval), "--in", p(&opt_eval), "--out", p(&summary)]);
    let text = fs::read_to_string(&summary).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("accuracy,precision,sensitivity,specificity,f1"));
    assert!(lines[1].starts_with("baseline,") && lines[2].starts_with("optimised,"));
    assert!(lines[2].split(',').all(|f| !f.is_empty()));

    let signal = data.join("S00000.csv");
    let out = ok(&["infer", "--model", p(&packed), "--in", p(&signal)]);
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = line.trim().split(',').collect();
    assert_eq!(line.lines().count(), 1);
    assert_eq!(fields.len(), 5);
    assert!(["N", "A", "O", "~"].contains(&fields[0]));
    let total: f64 = fields[1..].iter().map(|f| f.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);
    ok(&["infer", "--model", p(&packed), "--in", p(&signal), "--shift"]);

    // inputs untouched, and a rerun reproduces every artifact
    assert_eq!(dir_bytes(&data), before);
    ok(&["train", "--config", c, "--in", p(&data), "--out", p(&t.join("base2"))]);
    assert_eq!(dir_bytes(&t.join("base")), dir_bytes(&t.join("base2")));
}
