use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two well separated blobs along the first feature, 40 rows.
fn blobs_file() -> String {
    let mut text = String::new();
    for i in 0..40 {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.5;
        text.push_str(&format!("{} 1:{} 2:{}\n", sign as i32, 2.0 * sign + jitter, jitter));
    }
    text
}

fn fixture(dir: &Path) -> String {
    fs::write(dir.join("blobs.libsvm"), blobs_file()).unwrap();
    fs::write(
        dir.join("datasets.json"),
        r#"{ "datasets": [
            { "name": "blobs", "path": "blobs.libsvm", "train_size": 20, "test_size": 20, "repetitions": 2 },
            { "name": "ghost", "path": "ghost.libsvm", "train_size": 5, "test_size": 5 }
        ] }"#,
    )
    .unwrap();
    let config = dir.join("run.json");
    fs::write(
        &config,
        r#"{ "manifest": "datasets.json", "datasets": ["blobs"], "methods": ["ngmkl1", "mkl"],
             "train": { "epochs": 20, "batch_size": 10, "hidden_widths": [4] }, "boost_rounds": 3 }"#,
    )
    .unwrap();
    config.to_string_lossy().into_owned()
}

#[test]
fn list_kernels_prints_the_bank() {
    let out = bench(&["list-kernels"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 17);
    assert!(text.lines().next().unwrap().ends_with("poly(d=1)"));
    assert!(text.lines().last().unwrap().ends_with("gauss(sigma=128)"));
}

#[test]
fn verify_gradients_succeeds() {
    let out = bench(&["verify-gradients", "--instances", "5"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("0 failing"));
}

#[test]
fn run_prints_csv_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out_dir = dir.path().join("results");
    let out = bench(&["run", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("dataset,method,mean_error,std_error,reps,failed\nblobs,NGMKL1,"), "{text}");
    assert_eq!(fs::read_to_string(out_dir.join("report.csv")).unwrap(), text);
    assert!(out_dir.join("curves/blobs_ngmkl1_rep1.csv").is_file());
    assert!(out_dir.join("selection/blobs_ngmkl1_rep0.csv").is_file());
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = bench(&["run", "--config", &config, "--method", "NGMKL3", "--reps", "1", "--seed", "4", "--format", "markdown"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().next().unwrap(), "| Dataset | NGMKL3 |");
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn exit_code_is_nonzero_only_when_everything_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = bench(&["run", "--config", &config, "--dataset", "ghost"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ghost.libsvm"));

    let out = bench(&["run", "--config", &config, "--method", "svm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
}
