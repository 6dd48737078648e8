use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use asni::cli::runner::Summary;

fn asni(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asni")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--n-train", "80", "--n-test", "120", "--d-total", "30", "--d-useful", "6", "--d-redundant", "6", "--seed", "4",
];

fn tiny_config(dir: &Path, lr: f64) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "experiment": "madelon",
        "madelon": {"n_train": 80, "n_test": 120, "d_total": 30, "d_useful": 6, "d_redundant": 6, "seed": 7},
        "regimes": [
            {"kind": "none"},
            {"kind": "asni", "lambdas": [0.1, 0.5]},
            {"kind": "iid_bernoulli", "keep_probs": [0.8]}
        ],
        "seeds": [0, 1],
        "epochs": 5,
        "batch_size": 16,
        "lr": lr,
        "eval_every": 10,
        "eval_samples": 60,
        "silhouette_samples": 60
    });
    let p = dir.join("exp.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn gen_madelon_is_byte_identical_across_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let mut args = vec!["gen-madelon", "--out", path(dir)];
        args.extend_from_slice(SMALL);
        let out = asni(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["train.csv", "test.csv", "roles.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let roles = fs::read_to_string(a.join("roles.csv")).unwrap();
    assert_eq!(roles.lines().count(), 31);
    assert_eq!(roles.lines().filter(|l| l.ends_with(",useful")).count(), 6);
}

#[test]
fn train_and_report_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 0.01);
    let runs = [tmp.path().join("r1"), tmp.path().join("r2")];
    for out_dir in &runs {
        let out = asni(&["train", "--config", path(&cfg), "--output-dir", path(out_dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let summary: Summary =
        serde_json::from_str(&fs::read_to_string(runs[0].join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.regimes.len(), 3);
    assert!(summary.failed_runs.is_empty() && summary.missing_runs.is_empty());

    let run_ids: Vec<String> = fs::read_dir(runs[0].join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(run_ids.len(), 8);
    for id in &run_ids {
        for name in ["metrics.csv", "model.json", "run.json"] {
            let a = fs::read(runs[0].join("runs").join(id).join(name)).unwrap();
            let b = fs::read(runs[1].join("runs").join(id).join(name)).unwrap();
            assert_eq!(a, b, "{id}/{name}");
        }
    }
    assert_eq!(fs::read(runs[0].join("summary.json")).unwrap(), fs::read(runs[1].join("summary.json")).unwrap());
    let metrics = fs::read_to_string(runs[0].join("runs").join("linear_asni_lambda0.5_seed1").join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_hash="));
    assert!(metrics.contains("# seed=1"));

    let out = asni(&["report", path(&runs[0])]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(runs[0].join("report").join("accuracy.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(runs[0].join("report").join("series.csv").exists());
}

#[test]
fn cli_overrides_replace_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 0.01);
    let out_dir = tmp.path().join("o");
    let out = asni(&[
        "train", "--config", path(&cfg), "--noise-kind", "iid_gaussian", "--lambda", "0.2", "--seeds", "3",
        "--output-dir", path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ids: Vec<String> = fs::read_dir(out_dir.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(ids, vec!["linear_iid_gaussian_lambda0.2_seed3".to_string()]);
}

#[test]
fn divergence_exits_with_three_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 1e8);
    let out_dir = tmp.path().join("o");
    let out = asni(&["train", "--config", path(&cfg), "--seeds", "0", "--noise-kind", "none", "--output-dir", path(&out_dir)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stdout));
    let run = fs::read_to_string(out_dir.join("runs").join("linear_none_base_seed0").join("run.json")).unwrap();
    assert!(run.contains("\"diverged\""), "{run}");
}

#[test]
fn verify_passes_and_self_test_fails() {
    let out = asni(&["verify", "--profile", "quick", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("penalty_identity"));

    let out = asni(&["verify", "--profile", "quick", "--seed", "3", "--self-test"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&asni(&[])), 1);
    assert_eq!(code(&asni(&["train", "--bogus"])), 1);
    assert_eq!(code(&asni(&["train"])), 1);
    assert_eq!(code(&asni(&["train", "--experiment", "madelon", "--noise-kind", "laplace"])), 1);
    assert_eq!(code(&asni(&["verify", "--profile", "slow"])), 1);
    assert_eq!(code(&asni(&["--help"])), 0);
    assert_eq!(code(&asni(&["--version"])), 0);
}

#[test]
fn report_on_an_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = asni(&["report", path(tmp.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config.json"));
}

#[test]
fn malformed_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    fs::write(&p, r#"{"experiment": "madelon", "lamda": [0.1]}"#).unwrap();
    let out = asni(&["train", "--config", path(&p)]);
    assert_eq!(code(&out), 1);
}
