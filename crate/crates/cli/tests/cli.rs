use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "toy": {"classes": 3, "train_per_cell": 6, "test_per_cell": 3},
  "distill": {"ipc": 2, "iterations": 5, "eta": 0.5, "featurizer": {"kind": "linear", "features": 16}},
  "eval": {"epochs": 20, "runs": 2}
}"#;

fn sgs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgs"))
        .args(args)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn only_file(dir: &Path, prefix: &str, suffix: &str) -> PathBuf {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let n = p.file_name().unwrap().to_string_lossy();
            n.starts_with(prefix) && n.ends_with(suffix)
        })
        .collect();
    assert_eq!(found.len(), 1, "{prefix}*{suffix} in {}", dir.display());
    found.pop().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = sgs(&[
        "eval",
        "--protocol",
        "mdg",
        "--targets",
        "all",
        "--data",
        "/no/such/file.dgdd",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(3));
    let stderr = String::from_utf8(r.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"distill": {"ipc": 2, "lr": 3}}"#).unwrap();
    let r = sgs(&[
        "distill",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert_eq!(sgs(&["distill", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(sgs(&["--help"]).status.code(), Some(0));
}

#[test]
fn zero_lambdas_match_dm_only_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let zero = ["--lambda-c", "0", "--lambda-d", "0"];
    let mut args = vec!["distill", "--config", s(&cfg), "--out", s(&a)];
    args.extend(zero);
    assert!(sgs(&args).status.success());
    let mut args = vec!["distill", "--config", s(&cfg), "--out", s(&b), "--dm-only"];
    args.extend(zero);
    assert!(sgs(&args).status.success());
    assert!(sgs(&["distill", "--config", s(&cfg), "--out", s(&c)])
        .status
        .success());

    let read = |d: &Path| std::fs::read(only_file(d, "synthetic_", ".dgdd")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = dir.path().join("first");
    let r = sgs(&[
        "distill",
        "--config",
        s(&cfg),
        "--out",
        s(&first),
        "--seed",
        "3",
        "--ipc",
        "3",
        "--dump-rmaps",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let resolved = only_file(&first, "resolved_config_", ".json");

    let second = dir.path().join("second");
    assert!(sgs(&[
        "distill",
        "--config",
        s(&resolved),
        "--out",
        s(&second),
        "--dump-rmaps"
    ])
    .status
    .success());
    let mut names: Vec<_> = std::fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in names {
        assert_eq!(
            std::fs::read(first.join(&n)).unwrap(),
            std::fs::read(second.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn eval_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let data_dir = dir.path().join("data");
    assert!(
        sgs(&["gen-data", "--config", s(&cfg), "--out", s(&data_dir)])
            .status
            .success()
    );
    let data = data_dir.join("dataset.dgdd");
    let before = std::fs::read(&data).unwrap();
    let out = dir.path().join("eval");
    let r = sgs(&[
        "eval",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--targets",
        "0,2",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read(&data).unwrap(), before);
    let csv = std::fs::read_to_string(only_file(&out, "eval_mdg_", ".csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("target,seed,accuracy"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(only_file(&out, "summary_mdg_", ".json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["per_target"].as_object().unwrap().len(), 2);
}

#[test]
fn oracle_writes_curve_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let r = sgs(&[
        "oracle",
        "--s-list",
        "4,16,64",
        "--trials",
        "300",
        "--out",
        s(&out),
    ]);
    assert!(r.status.success());
    let csv = std::fs::read_to_string(out.join("oracle_class.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("oracle_summary.json")).unwrap())
            .unwrap();
    let slope = summary["class_slope"].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 0.2, "slope {slope}");
    assert_eq!(
        sgs(&["oracle", "--s-list", "4,16", "--out", s(&out)])
            .status
            .code(),
        Some(1)
    );
}

fn sweep_rows(out: &Path, param: &str) -> Vec<Vec<String>> {
    let csv = std::fs::read_to_string(only_file(out, &format!("sweep_{param}_"), ".csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("param,value,mean_ood_accuracy,std"));
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn lambda_sweep_recovers_dm_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("sweep");
    let r = sgs(&[
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--param",
        "lambda-c",
        "--values",
        "0,0.5,1,2",
        "--lambda-d",
        "0",
        "--jobs",
        "2",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = sweep_rows(&out, "lambda_c");
    assert_eq!(rows.len(), 4);

    let dm = dir.path().join("dm");
    assert!(
        sgs(&["eval", "--config", s(&cfg), "--out", s(&dm), "--dm-only"])
            .status
            .success()
    );
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(only_file(&dm, "summary_mdg_", ".json")).unwrap(),
    )
    .unwrap();
    let dm_mean = summary["mean"].as_f64().unwrap();
    assert_eq!(rows[0][2], sgs_core::data::fmt_sig6(dm_mean));
}

#[test]
fn k_sweep_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    // tinted sub-styles with enough samples that no pseudo-domain misses a class
    let cfg = dir.path().join("tinted.json");
    std::fs::write(
        &cfg,
        TINY.replace(
            r#""train_per_cell": 6"#,
            r#""train_per_cell": 40, "substyles": [[0.4,0,0],[0,0.4,0],[0,0,0.4],[0.4,0.4,0]]"#,
        ),
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let r = sgs(&[
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--param",
        "k",
        "--values",
        "2,3,4",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(sweep_rows(&out, "k").len(), 3);
}

#[test]
fn oversized_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<String> = (0..65).map(|i| format!("{}", i as f64 / 10.0)).collect();
    let r = sgs(&[
        "sweep",
        "--param",
        "lambda-d",
        "--values",
        &values.join(","),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn cluster_reports_purity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("c");
    assert!(
        sgs(&["cluster", "--config", s(&cfg), "--out", s(&out), "--k", "3"])
            .status
            .success()
    );
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("cluster_summary_k3.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["sizes"].as_array().unwrap().len(), 3);
    assert!(summary["purity"].as_f64().unwrap() > 0.0);
}
