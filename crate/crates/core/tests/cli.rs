use std::path::Path;
use std::process::{Command, Output};

fn etd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etd")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors() {
    assert_eq!(etd(&["bogus"]).status.code(), Some(1));
    assert_eq!(etd(&[]).status.code(), Some(1));
    assert_eq!(etd(&["selftest", "--cascade.bogus", "1"]).status.code(), Some(1));
    assert_eq!(etd(&["train", "--model", "medium"]).status.code(), Some(1));
    let help = etd(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("eval-stream"));
}

#[test]
fn selftest_prints_pass_lines() {
    let out = etd(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn config_file_keys_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"cascade": {"debounce_steps": 3, "typo": 1}}"#).unwrap();
    assert_eq!(etd(&["selftest", "--config", s(&bad)]).status.code(), Some(1));
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"cascade": {"debounce_steps": 3}}"#).unwrap();
    assert_eq!(etd(&["selftest", "--config", s(&good)]).status.code(), Some(0));
    assert_eq!(etd(&["selftest", "--config", s(&dir.path().join("missing.json"))]).status.code(), Some(1));
}

#[test]
fn datagen_writes_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out_a = etd(&["datagen", "--variant", "with_pause", "--n", "100", "--seed", "7", "--out", s(&a)]);
    assert_eq!(out_a.status.code(), Some(0), "{}", String::from_utf8_lossy(&out_a.stderr));
    assert!(a.join("manifest.json").exists());
    assert_eq!(json(&out_a)["samples"], 100);
    etd(&["datagen", "--variant", "with_pause", "--n", "100", "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn train_and_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = data.join("manifest.json");
    let light = dir.path().join("light.etdw");
    let heavy = dir.path().join("heavy.etdw");
    assert!(etd(&["datagen", "--variant", "mix", "--n", "8", "--seed", "2", "--out", s(&data)]).status.success());

    let train_light = ["train", "--model", "light", "--manifest", s(&manifest), "--out", s(&light), "--epochs", "1"];
    let first = etd(&train_light);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let weights = std::fs::read(&light).unwrap();
    let second = etd(&train_light);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(weights, std::fs::read(&light).unwrap());

    let small = ["--heavy.arch.hidden", "8", "--heavy.arch.layers", "1", "--epochs", "1"];
    let mut args = vec!["train", "--model", "heavy", "--manifest", s(&manifest), "--out", s(&heavy)];
    args.extend(small);
    assert!(etd(&args).status.success());

    let common = ["--manifest", s(&manifest), "--light", s(&light), "--heavy", s(&heavy), "--split", "all"];
    let mut args = vec!["eval-stream", "--mode", "speculative"];
    args.extend(common);
    let out = etd(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    for key in ["macro_f1", "macro_iou", "total_flops"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report["compute"].get("wall_ms_per_step").is_none());
    assert_eq!(out.stdout, etd(&args).stdout);

    let svg = dir.path().join("chart.svg");
    let mut args = vec!["bench", "--svg", s(&svg), "--cascade.debounce_steps", "3"];
    args.extend(common);
    let bench = json(&etd(&args));
    assert_eq!(bench["modes"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let mut args = vec!["eval-binary"];
    args.extend(common);
    let binary = json(&etd(&args));
    assert!(binary["accuracy"].as_f64().unwrap() <= 1.0);

    let wav = std::fs::read_dir(data.join("wav")).unwrap().next().unwrap().unwrap().path();
    let casc = json(&etd(&["cascade", "--wav", s(&wav), "--light", s(&light), "--heavy", s(&heavy)]));
    assert_eq!(casc["labels"].as_array().unwrap().len(), casc["steps"].as_u64().unwrap() as usize);

    // wrong model kind is a runtime error
    let out = etd(&["eval-binary", "--manifest", s(&manifest), "--heavy", s(&light)]);
    assert_eq!(out.status.code(), Some(2));
}
