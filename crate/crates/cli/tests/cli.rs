use std::path::Path;
use std::process::{Command, Output};

fn anyshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anyshot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_small_spec(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.json");
    std::fs::write(
        &spec,
        r#"{"n_seen": 4, "n_novel": 2, "d_x": 6, "d_c": 3, "samples_per_class": 40}"#,
    )
    .unwrap();
    spec
}

fn write_train_config(dir: &Path, data: &Path) -> std::path::PathBuf {
    let cfg = dir.join("train.json");
    let body = serde_json::json!({
        "dataset": data.join("manifest.json"),
        "output_dir": dir.join("run"),
        "training": {"hidden_units": 8, "max_epochs": 2, "early_stop_patience": 0}
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    cfg
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = write_small_spec(dir.path());
    let out = anyshot(&["synth-data", "--spec", s(&spec), "--out", s(&data), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let cfg = write_train_config(dir.path(), &data);
    let out = anyshot(&["train", "--config", s(&cfg), "--mode", "transductive"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["checkpoint.bin", "losses.csv", "run.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["training"]["mode"], "transductive");
    assert!(meta["wall_time_secs"].as_f64().unwrap() >= 0.0);

    let report = dir.path().join("report.json");
    let per_class = dir.path().join("per_class.csv");
    let out = anyshot(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.bin")),
        "--dataset",
        s(&data.join("manifest.json")),
        "--protocol",
        "gzsl",
        "--top-k",
        "2",
        "--out",
        s(&report),
        "--per-class-csv",
        s(&per_class),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["protocol"], "gzsl");
    assert_eq!(r["mode"], "transductive");
    let (u, sv, h) = (
        r["u"].as_f64().unwrap(),
        r["s"].as_f64().unwrap(),
        r["h"].as_f64().unwrap(),
    );
    assert!((h - anyshot_core::anyshot::harmonic_mean(u, sv)).abs() < 1e-12);
    assert!(r["t1"].is_null());
    let rows = std::fs::read_to_string(&per_class).unwrap().lines().count();
    assert_eq!(rows, 1 + 6);

    let out = anyshot(&[
        "eval",
        "--checkpoint",
        s(&run.join("checkpoint.bin")),
        "--dataset",
        s(&data.join("manifest.json")),
        "--protocol",
        "gfsl",
        "--shots",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_inputs_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"dataset": "d", "output_dir": "o", "trainig": {}}"#).unwrap();
    assert_eq!(anyshot(&["train", "--config", s(&cfg)]).status.code(), Some(1));

    std::fs::write(&cfg, r#"{"n_seen": 0}"#).unwrap();
    let out = anyshot(&["synth-data", "--spec", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_seen"));

    let missing = dir.path().join("missing.json");
    let out = anyshot(&["train", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(anyshot(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn eval_rejects_dimension_mismatch_and_missing_shots() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = write_small_spec(dir.path());
    assert!(anyshot(&["synth-data", "--spec", s(&spec), "--out", s(&data)]).status.success());
    let cfg = write_train_config(dir.path(), &data);
    assert!(anyshot(&["train", "--config", s(&cfg)]).status.success());
    let ckpt = dir.path().join("run/checkpoint.bin");

    let out = anyshot(&[
        "eval", "--checkpoint", s(&ckpt), "--dataset", s(&data.join("manifest.json")), "--protocol", "fsl",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let other = dir.path().join("other");
    assert!(anyshot(&["synth-data", "--out", s(&other)]).status.success());
    let out = anyshot(&[
        "eval", "--checkpoint", s(&ckpt), "--dataset", s(&other.join("manifest.json")), "--protocol", "zsl",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_x"));
}

#[test]
fn convert_csv_writes_a_blob() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    std::fs::write(&csv, "0.5,1\n2,3\n4,5\n").unwrap();
    let blob = dir.path().join("x.bin");
    let out = anyshot(&["convert-csv", "--input", s(&csv), "--output", s(&blob)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("3x2"));
    assert_eq!(&std::fs::read(&blob).unwrap()[..8], b"ASGMAT01");

    std::fs::write(&csv, "a,b\n").unwrap();
    let out = anyshot(&["convert-csv", "--input", s(&csv), "--output", s(&blob)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let spec: anyshot_core::SyntheticSpec =
        anyshot_cli::config::read_json(&root.join("synthetic.json")).unwrap();
    spec.validate().unwrap();
    let train = anyshot_cli::config::load_train_config(&root.join("train.json")).unwrap();
    train.validate().unwrap();
    assert!(train.dataset.ends_with("data/manifest.json"));
    let ablate = anyshot_cli::config::load_ablate_config(&root.join("ablate.json")).unwrap();
    ablate.validate().unwrap();
}

#[test]
fn synth_data_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_small_spec(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        assert!(anyshot(&["synth-data", "--spec", s(&spec), "--out", s(out), "--seed", seed]).status.success());
    }
    for f in ["features.bin", "embeddings.bin", "labels.bin", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("features.bin")).unwrap(),
        std::fs::read(c.join("features.bin")).unwrap()
    );
}
