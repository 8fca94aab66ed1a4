use std::path::Path;
use std::process::{Command, Output};

fn car(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_car"))
        .current_dir(dir)
        .env_remove("CAR_DATA_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn gen_data_writes_splits_stats_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&car(tmp.path(), &["--data-dir", "a", "gen-data", "--size", "5000", "--seed", "1"]));
    ok(&car(tmp.path(), &["--data-dir", "b", "gen-data", "--size", "5000", "--seed", "1"]));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(lines(&a.join("train.jsonl")), 3500);
    assert_eq!(lines(&a.join("valid.jsonl")), 500);
    assert_eq!(lines(&a.join("test.jsonl")), 1000);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "synth_config.json", "candidates.json", "stats.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let stats: serde_json::Value = serde_json::from_slice(&read(&a.join("stats.json"))).unwrap();
    let rate = stats["defect_rate"].as_f64().unwrap();
    assert!((rate - 0.2).abs() <= 0.02, "defect rate {rate}");
    let histogram = stats["overall"]["label_counts"].as_array().unwrap();
    assert_eq!(histogram.len(), 35);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_car"))
        .current_dir(tmp.path())
        .env("CAR_DATA_DIR", "from_env")
        .args(["gen-data", "--size", "100"])
        .output()
        .unwrap();
    ok(&out);
    assert!(tmp.path().join("from_env/train.jsonl").exists());
}

#[test]
fn untrained_model_is_at_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&car(d, &["--data-dir", "data", "gen-data", "--size", "10000", "--seed", "4"]));
    ok(&car(d, &["--data-dir", "data", "--preset", "micro", "train", "--epochs", "0", "--seed", "4", "--out", "m"]));
    ok(&car(d, &["--data-dir", "data", "eval", "--checkpoint", "m", "--report", "r.json", "--predictions", "p.jsonl"]));
    let report: serde_json::Value = serde_json::from_slice(&read(&d.join("r.json"))).unwrap();
    assert_eq!(report["samples"].as_u64(), Some(2000));
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((acc - 1.0 / 35.0).abs() <= 0.03, "accuracy {acc}");
    assert_eq!(lines(&d.join("p.jsonl")), 2000);
}

#[test]
fn training_is_deterministic_and_revise_shows_all_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&car(d, &["--data-dir", "data", "gen-data", "--size", "200", "--seed", "2"]));
    for out in ["m1", "m2"] {
        let log = ok(&car(d, &["--data-dir", "data", "--preset", "micro", "train", "--epochs", "2", "--seed", "9", "--out", out]));
        assert!(log.contains("best epoch"));
    }
    for f in ["manifest.json", "params.bin", "log.jsonl", "settings.toml"] {
        assert_eq!(read(&d.join("m1").join(f)), read(&d.join("m2").join(f)), "{f}");
    }
    let shown = ok(&car(d, &["--data-dir", "data", "revise", "--checkpoint", "m1", "--limit", "2"]));
    for column in ["defective conditions:", "revised conditions:", "true conditions:", "prediction:", "gold answer:"] {
        assert_eq!(shown.matches(column).count(), 2, "{column}\n{shown}");
    }
}

#[test]
fn settings_file_is_overridden_by_flags_and_printed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.toml"), "data_dir = \"fromfile\"\n[gen]\nsize = 150\nseed = 8\n").unwrap();
    let out = car(d, &["--config", "run.toml", "gen-data", "--seed", "9"]);
    ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("size = 150"), "{stderr}");
    assert!(stderr.contains("seed = 9"), "{stderr}");
    let total: usize = ["train", "valid", "test"]
        .iter()
        .map(|s| lines(&d.join("fromfile").join(format!("{s}.jsonl"))))
        .sum();
    assert_eq!(total, 150);
}

#[test]
fn ablation_writes_report_and_projection() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&car(d, &["--data-dir", "data", "gen-data", "--size", "300", "--seed", "5"]));
    let shown = ok(&car(
        d,
        &["--data-dir", "data", "--preset", "micro", "ablation", "--epochs", "1", "--seeds", "1", "--report", "abl.json", "--pca", "pca.csv"],
    ));
    assert!(shown.contains("seed 1 car") && shown.contains("seed 1 ca "), "{shown}");
    let report: serde_json::Value = serde_json::from_slice(&read(&d.join("abl.json"))).unwrap();
    assert_eq!(report["summary"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(d.join("pca.csv")).unwrap();
    assert!(csv.starts_with("variant,id,defective,pc1,pc2\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 60);
}

#[test]
fn grad_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let table = ok(&car(tmp.path(), &["grad-check"]));
    assert!(table.contains("joint_loss_car"));
    assert!(!table.contains("FAIL"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(car(d, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(car(d, &["gen-data", "--p-wrong", "0.1"]).status.code(), Some(2));
    assert_eq!(car(d, &["--preset", "huge", "gen-data"]).status.code(), Some(2));
    assert_eq!(car(d, &["gen-data", "--size", "3"]).status.code(), Some(2));
    assert_eq!(car(d, &["--data-dir", "missing", "eval", "--checkpoint", "none"]).status.code(), Some(3));
    ok(&car(d, &["--data-dir", "data", "gen-data", "--size", "100"]));
    assert_eq!(car(d, &["--data-dir", "data", "eval", "--checkpoint", "none"]).status.code(), Some(3));
    std::fs::write(d.join("data/test.jsonl"), "{not json\n").unwrap();
    assert_eq!(car(d, &["--data-dir", "data", "eval", "--checkpoint", "none"]).status.code(), Some(3));
}
