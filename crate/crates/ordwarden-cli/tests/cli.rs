//! End-to-end tests driving the ordwarden binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ordwarden")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Builds a mixed labeled corpus (covert 3-PDU + legitimate) and returns
/// (scores.csv, labels.csv) paths.
fn build_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    run_ok(
        dir,
        &[
            "generate", "--covert", "--n", "3", "--groups", "100", "--flows", "30",
            "--seed", "7", "--out", "cov.jsonl", "--labels", "cov_labels.csv",
        ],
    );
    run_ok(
        dir,
        &[
            "generate", "--legit", "--flows", "30", "--length", "300",
            "--seed", "7", "--out", "legit.jsonl", "--labels", "legit_labels.csv",
        ],
    );
    run_ok(dir, &["score", "--input", "cov.jsonl", "--out", "cov_scores.csv"]);
    run_ok(dir, &["score", "--input", "legit.jsonl", "--out", "legit_scores.csv"]);

    // merge the per-class outputs into one corpus
    let merge = |a: &str, b: &str, out: &str, header_lines: usize| {
        let ta = fs::read_to_string(dir.join(a)).unwrap();
        let tb = fs::read_to_string(dir.join(b)).unwrap();
        let mut text: Vec<&str> = ta.lines().collect();
        text.extend(tb.lines().skip(header_lines));
        fs::write(dir.join(out), text.join("\n") + "\n").unwrap();
    };
    merge("cov_scores.csv", "legit_scores.csv", "scores.csv", 2);
    merge("cov_labels.csv", "legit_labels.csv", "labels.csv", 1);
    (dir.join("scores.csv"), dir.join("labels.csv"))
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["generate", "--covert", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conflicting_rules_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["detect", "--scores", "s.csv", "--theta", "4.5", "--model", "m.json", "--out", "v.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_with_threshold_detection() {
    let dir = tempfile::tempdir().unwrap();
    let (scores, labels) = build_corpus(dir.path());

    // detect exits 1 when it finds positives
    let out = run(
        dir.path(),
        &[
            "detect", "--scores", scores.to_str().unwrap(), "--theta", "4.5",
            "--out", "verdicts.csv", "--labels", labels.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("accuracy=100.000%"), "summary: {stderr}");

    let verdicts = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    assert!(verdicts.starts_with("# ordwarden.verdicts.v1\nflow_id,kappa,verdict\n"));
    let covert_rows = verdicts.lines().filter(|l| l.ends_with(",covert")).count();
    assert_eq!(covert_rows, 30);

    // a threshold below every covert score finds nothing and exits 0
    let out = run(
        dir.path(),
        &["detect", "--scores", scores.to_str().unwrap(), "--theta", "0.5", "--out", "v0.csv"],
    );
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn trained_depth_one_model_matches_equivalent_theta() {
    let dir = tempfile::tempdir().unwrap();
    let (scores, labels) = build_corpus(dir.path());

    run_ok(
        dir.path(),
        &[
            "train", "--scores", scores.to_str().unwrap(), "--labels", labels.to_str().unwrap(),
            "--max-depth", "1", "--out", "model.json",
        ],
    );
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["kind"], "tree");
    let split = model["nodes"][0]["split"].as_f64().unwrap();

    let m = run(
        dir.path(),
        &["detect", "--scores", scores.to_str().unwrap(), "--model", "model.json", "--out", "v_model.csv"],
    );
    let t = run(
        dir.path(),
        &[
            "detect", "--scores", scores.to_str().unwrap(), "--theta", &format!("{split}"),
            "--out", "v_theta.csv",
        ],
    );
    assert_eq!(m.status.code(), t.status.code());
    let read = |p: &str| {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .map(|l| l.rsplit(',').next().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(read("v_model.csv"), read("v_theta.csv"));
}

#[test]
fn evaluate_sweeps_the_paper_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let (scores, labels) = build_corpus(dir.path());

    run_ok(
        dir.path(),
        &[
            "evaluate", "--scores", scores.to_str().unwrap(), "--labels", labels.to_str().unwrap(),
            "--thresholds", "paper", "--out", "metrics.csv",
        ],
    );
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# ordwarden.metrics.v1");
    assert_eq!(lines[1], "threshold,tp,fp,tn,fn,precision,recall,accuracy,f1,fpr");
    assert_eq!(lines.len(), 2 + 32);
    // population is constant across rows
    for row in &lines[2..] {
        let f: Vec<&str> = row.split(',').collect();
        let total: u64 = f[1..5].iter().map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(total, 60);
    }

    run_ok(
        dir.path(),
        &[
            "evaluate", "--scores", scores.to_str().unwrap(), "--labels", labels.to_str().unwrap(),
            "--thresholds", "2.88659,4.5", "--out", "m2.csv",
        ],
    );
    let text = fs::read_to_string(dir.path().join("m2.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(2).unwrap().starts_with("2.88659,"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "generate", "--covert", "--n", "2", "--groups", "120", "--flows", "5",
            "--seed", "11", "--out", "a.jsonl", "--labels", "a_labels.csv",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "generate", "--covert", "--n", "2", "--groups", "120", "--flows", "5",
            "--seed", "11", "--out", "b.jsonl", "--labels", "b_labels.csv",
        ],
    );
    assert_eq!(fs::read(dir.path().join("a.jsonl")).unwrap(), fs::read(dir.path().join("b.jsonl")).unwrap());

    run_ok(dir.path(), &["score", "--input", "a.jsonl", "--out", "s1.csv"]);
    run_ok(dir.path(), &["score", "--input", "a.jsonl", "--out", "s2.csv"]);
    assert_eq!(fs::read(dir.path().join("s1.csv")).unwrap(), fs::read(dir.path().join("s2.csv")).unwrap());
}

#[test]
fn short_flows_warn_and_produce_no_row() {
    let dir = tempfile::tempdir().unwrap();
    // hand-built jsonl: flow "short" below one window, flow "long" above
    let mut lines = Vec::new();
    for i in 0..150u64 {
        lines.push(format!(r#"{{"flow":"short","i":{i},"seq":{},"bits":32,"ts_us":{}}}"#, i + 1, i));
    }
    for i in 0..220u64 {
        lines.push(format!(r#"{{"flow":"long","i":{i},"seq":{},"bits":32,"ts_us":{}}}"#, i + 1, i));
    }
    fs::write(dir.path().join("mixed.jsonl"), lines.join("\n") + "\n").unwrap();

    let out = run_ok(dir.path(), &["score", "--input", "mixed.jsonl", "--out", "s.csv"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "stderr: {stderr}");
    assert!(stderr.contains("150 packets"), "stderr: {stderr}");
    let rows = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3, "one data row expected: {rows}");
    // the in-order long flow sits at the fixed point
    assert!(rows.lines().nth(2).unwrap().ends_with("400,27,14.81481"));
}

#[test]
fn no_usable_flows_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "generate", "--legit", "--flows", "2", "--length", "150",
            "--seed", "3", "--out", "tiny.jsonl",
        ],
    );
    let out = run(dir.path(), &["score", "--input", "tiny.jsonl", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no flow reaches"));
}

#[test]
fn thread_cap_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "generate", "--legit", "--flows", "4", "--length", "250",
            "--seed", "5", "--out", "l.jsonl",
        ],
    );
    let out = Command::new(bin())
        .current_dir(dir.path())
        .env("ORDWARDEN_THREADS", "1")
        .args(["score", "--input", "l.jsonl", "--out", "s.csv"])
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = Command::new(bin())
        .current_dir(dir.path())
        .env("ORDWARDEN_THREADS", "zero")
        .args(["score", "--input", "l.jsonl", "--out", "s.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn pcap_and_jsonl_scores_agree() {
    let dir = tempfile::tempdir().unwrap();
    for (fmt, file) in [("pcap", "c.pcap"), ("jsonl", "c.jsonl")] {
        run_ok(
            dir.path(),
            &[
                "generate", "--covert", "--n", "4", "--groups", "60", "--flows", "8",
                "--seed", "21", "--out", file, "--format", fmt,
            ],
        );
    }
    run_ok(
        dir.path(),
        &["score", "--input", "c.pcap", "--extractor", "generic32", "--out", "sp.csv"],
    );
    run_ok(dir.path(), &["score", "--input", "c.jsonl", "--out", "sj.csv"]);
    assert_eq!(
        fs::read(dir.path().join("sp.csv")).unwrap(),
        fs::read(dir.path().join("sj.csv")).unwrap()
    );
}

#[test]
fn tcp_pcap_round_trip_scores() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        dir.path(),
        &[
            "generate", "--covert", "--n", "2", "--groups", "110", "--flows", "3",
            "--seed", "9", "--transport", "tcp", "--out", "t.pcap", "--format", "pcap",
        ],
    );
    run_ok(dir.path(), &["score", "--input", "t.pcap", "--extractor", "tcp32", "--out", "st.csv"]);
    let rows = fs::read_to_string(dir.path().join("st.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 3);
    assert!(rows.contains("tcp:"));
}
