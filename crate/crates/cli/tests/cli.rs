use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bandnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandnet"))
        .args(args)
        .arg("-q")
        .output()
        .expect("binary runs")
}

fn bandnet_raw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandnet")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small, fast synthetic data flags.
const TINY: [&str; 6] = ["--samples", "300", "--participants", "1", "--intensities", "2"];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(TINY);
    v
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
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = bandnet(&with_tiny(&["synth", "--seed", "7", "--out", s(d)]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (x, y) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(x.len(), 4);
    assert_eq!(x, y);
}

#[test]
fn train_writes_a_report_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = bandnet(&with_tiny(&[
        "train", "--band", "beta", "--model", "small", "--optimizer", "nadam", "--lr", "1e-3", "--max-epochs", "5",
        "--seed", "3", "--out-dir", s(&out),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("beta,necker,small,nadam,"));
    for f in ["report.json", "history.csv", "model.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn grid_of_two_optimizers_gives_two_rows_and_repeats_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = bandnet(&with_tiny(&[
            "grid", "--bands", "beta", "--datasets", "necker", "--models", "cnn", "--optimizers", "adam,ftrl",
            "--max-epochs", "2", "--seed", "9", "--out-dir", s(&out),
        ]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(out.join("report.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
        // Drop the four timing columns.
        let stripped: Vec<String> = text
            .lines()
            .map(|l| l.split(',').take(15).collect::<Vec<_>>().join(","))
            .collect();
        reports.push(stripped);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn preprocess_train_explain_and_report_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let split = tmp.path().join("split.json");
    let o = bandnet(&with_tiny(&["preprocess", "--band", "alpha", "--dataset", "monalisa", "--seed", "1", "--out", s(&split)]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let run = tmp.path().join("run");
    let o = bandnet(&[
        "train", "--data", s(&split), "--band", "alpha", "--dataset", "monalisa", "--model", "small", "--optimizer",
        "adam", "--max-epochs", "2", "--out-dir", s(&run),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let table = tmp.path().join("phi.csv");
    let o = bandnet(&[
        "explain", "--model", s(&run.join("model.json")), "--data", s(&split), "--instances", "2", "--background",
        "5", "--permutations", "4", "--segment-size", "50", "--out", s(&table),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let phi = fs::read_to_string(&table).unwrap();
    assert!(phi.starts_with("feature_index,time_s,phi_mean,phi_abs_mean\n"));
    assert_eq!(phi.lines().count(), 1 + 6);

    let merged = tmp.path().join("merged.json");
    let o = bandnet(&["report", s(&run.join("report.csv")), "--out", s(&merged)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&merged).unwrap().contains("\"rows\""));
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&bandnet_raw(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&bandnet_raw(&["frobnicate"])), 1);
    assert_eq!(code(&bandnet_raw(&["--help"])), 0);
    assert_eq!(code(&bandnet(&with_tiny(&["train", "--model", "huge", "--out-dir", s(tmp.path())]))), 1);
    assert_eq!(code(&bandnet(&with_tiny(&["train", "--max-epochs", "0", "--out-dir", s(tmp.path())]))), 1);

    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&bandnet(&["report", s(&missing), "--out", s(&tmp.path().join("x.csv"))])), 2);

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "patience = 3\npatience = 4\n").unwrap();
    assert_eq!(code(&bandnet(&["train", "--config", s(&cfg), "--out-dir", s(tmp.path())])), 1);
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nmax_epochs = 1\nsynthetic.samples = 300\nsynthetic.participants = 1\nsynthetic.intensities = 2\n").unwrap();
    let out = tmp.path().join("o");
    let o = bandnet(&["train", "--config", s(&cfg), "--max-epochs", "2", "--patience", "5", "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
}
