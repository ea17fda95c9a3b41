use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fedau(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedau"))
        .args(args)
        .env_remove("FEDAU_OUT")
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Trains the smoke preset under `root` and returns the run directory.
fn train_smoke(root: &Path, seed: &str) -> PathBuf {
    let out = fedau(&[
        "train",
        "--preset",
        "synth-smoke",
        "--seed",
        seed,
        "--out",
        root.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("run: ").map(str::to_string))
        .unwrap();
    PathBuf::from(line)
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn equal_seeds_give_identical_checkpoints_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train_smoke(&tmp.path().join("a"), "7");
    let b = train_smoke(&tmp.path().join("b"), "7");
    for rel in [
        "checkpoints/model.fauw",
        "checkpoints/learned_head.fauw",
        "checkpoints/aux_0.fauw",
        "report.json",
        "rounds.jsonl",
    ] {
        assert_eq!(read(&a, rel), read(&b, rel), "{rel}");
    }
    let c = train_smoke(&tmp.path().join("c"), "8");
    assert_ne!(read(&a, "checkpoints/model.fauw"), read(&c, "checkpoints/model.fauw"));
}

#[test]
fn unlearning_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_smoke(tmp.path(), "3");
    let ckpt = run.to_str().unwrap();

    let out = fedau(&["unlearn", "--ckpt", ckpt, "--scope", "samples", "--alpha", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("unlearn_time_s: "));
    assert_eq!(
        read(&run, "checkpoints/unlearned_head.fauw"),
        read(&run, "checkpoints/learned_head.fauw")
    );
    let report: serde_json::Value = serde_json::from_slice(&read(&run, "unlearn_report.json")).unwrap();
    assert_eq!(report["requirements"]["r1_rate"], 1.0);

    let out = fedau(&[
        "unlearn",
        "--ckpt",
        ckpt,
        "--scope",
        "samples",
        "--alpha",
        "0.9",
        "--verbose-report",
    ]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&read(&run, "unlearn_report.json")).unwrap();
    assert!(report["requirements"]["examples"].is_array());

    let out = fedau(&[
        "eval",
        "--ckpt",
        ckpt,
        "--dataset",
        run.join("data/test").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let eval: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() > 0.5, "{eval}");
    assert!(eval["model"].as_str().unwrap().ends_with("unlearned_model.fauw"));
}

#[test]
fn strict_bounds_refuse_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_smoke(tmp.path(), "4");
    let before = fs::read(run.join("checkpoints/learned_head.fauw")).unwrap();
    let out = fedau(&[
        "unlearn",
        "--ckpt",
        run.to_str().unwrap(),
        "--scope",
        "samples",
        "--alpha",
        "0.9",
        "--strict-bounds",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!run.join("checkpoints/unlearned_head.fauw").exists());
    assert_eq!(fs::read(run.join("checkpoints/learned_head.fauw")).unwrap(), before);
}

#[test]
fn missing_auxiliary_head_is_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train_smoke(tmp.path(), "5");
    fs::remove_file(run.join("checkpoints/aux_0.fauw")).unwrap();
    let out = fedau(&["unlearn", "--ckpt", run.to_str().unwrap(), "--scope", "samples"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_are_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&fedau(&["train", "--config", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&fedau(&["train", "--preset", "no-such-preset"])), 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"schema_version": 1, "name": "x", "surprise": true}"#).unwrap();
    let out = fedau(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    assert_eq!(code(&fedau(&["sweep", "--param", "gravity", "--values", "1,2"])), 2);
    assert_eq!(code(&fedau(&["sweep", "--param", "alpha", "--values", "0.5,abc"])), 2);
    let nowhere = tmp.path().join("nowhere");
    assert_eq!(
        code(&fedau(&[
            "unlearn",
            "--ckpt",
            nowhere.to_str().unwrap(),
            "--scope",
            "samples"
        ])),
        2
    );
}

#[test]
fn config_file_is_copied_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let seeded = train_smoke(&tmp.path().join("seed"), "1");
    let text = format!(
        "{}\n\n",
        String::from_utf8(read(&seeded, "config.json"))
            .unwrap()
            .replace("\n", "\n  ")
    );
    let cfg = tmp.path().join("smoke.json");
    fs::write(&cfg, &text).unwrap();
    let out_root = tmp.path().join("out");
    let out = fedau(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_root.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = PathBuf::from(stdout(&out).lines().find_map(|l| l.strip_prefix("run: ")).unwrap());
    assert_eq!(fs::read_to_string(run.join("config.json")).unwrap(), text);
    assert!(run.starts_with(&out_root));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fedau"))
        .args(["train", "--preset", "synth-smoke"])
        .env("FEDAU_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("synth-smoke").is_dir());
}
