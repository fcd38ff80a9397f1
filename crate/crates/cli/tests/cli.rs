//! End-to-end tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn kaczmarz(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kaczmarz"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_lines(output: &Output) -> Vec<String> {
    String::from_utf8(output.stdout.clone())
        .expect("stdout is UTF-8")
        .lines()
        .map(str::to_string)
        .collect()
}

fn write_identity_mtx(dir: &Path, n: usize) -> std::path::PathBuf {
    let mut text = String::from("%%MatrixMarket matrix array real general\n");
    text.push_str(&format!("{n} {n}\n"));
    for j in 0..n {
        for i in 0..n {
            text.push_str(if i == j { "1.0\n" } else { "0.0\n" });
        }
    }
    let path = dir.join("identity.mtx");
    std::fs::write(&path, text).expect("temp dir is writable");
    path
}

/// Key-value block and JSON object of `analyze` must agree field-for-field,
/// and an identity matrix pins every parameter: delta = delta_max = 0,
/// improvement 0, both condition numbers equal to n.
#[test]
fn analyze_identity_prints_matching_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = write_identity_mtx(dir.path(), 4);
    let output = kaczmarz(&["analyze", "--input", mtx.to_str().unwrap()], dir.path());
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let lines = stdout_lines(&output);
    let json_line = lines.last().expect("analyze prints output");
    let json: serde_json::Value = serde_json::from_str(json_line).expect("last line is JSON");

    let mut keys_seen = 0;
    for line in &lines[..lines.len() - 1] {
        let (name, value) = line.split_once(" = ").expect("key-value line");
        keys_seen += 1;
        match &json[name] {
            serde_json::Value::Number(number) => {
                let parsed: f64 = value.parse().unwrap();
                assert_eq!(number.as_f64().unwrap(), parsed, "field {name}");
            }
            serde_json::Value::String(text) => assert_eq!(text, value, "field {name}"),
            other => panic!("field {name} missing from JSON: {other:?}"),
        }
    }
    assert_eq!(keys_seen, json.as_object().unwrap().len());

    assert_eq!(json["delta"], serde_json::json!(0.0));
    assert_eq!(json["delta_max"], serde_json::json!(0.0));
    assert_eq!(json["improvement"], serde_json::json!(0.0));
    assert_eq!(json["scaled_condition"], serde_json::json!(4.0));
    assert_eq!(json["weighted_condition"], serde_json::json!(4.0));
    // Orthogonal rows have all-zero correlations, so the refined factors are
    // defined and Q degenerates to infinity, spelled as a string in JSON.
    assert_eq!(json["q_factor"], serde_json::json!("inf"));
}

#[test]
fn experiment_preset_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        let output = kaczmarz(
            &[
                "experiment",
                "--preset",
                "fig4a",
                "--seed",
                "7",
                "--trials",
                "3",
                "--iterations",
                "40",
                "--output-dir",
                sub,
            ],
            dir.path(),
        );
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        std::fs::read(dir.path().join(sub).join("fig4a.csv")).unwrap()
    };
    let first = run("a");
    let second = run("b");
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

#[test]
fn verify_lemma_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let output = kaczmarz(
        &[
            "verify",
            "--suite",
            "lemma",
            "--instances",
            "30",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let lines = stdout_lines(&output);
    assert!(lines
        .iter()
        .any(|l| l.starts_with("lemma:") && l.ends_with(" ok")));
    assert_eq!(lines.last().map(String::as_str), Some("verify: ok"));
}

/// Checking zero instances verifies nothing; the driver treats that as a
/// verification failure, which is the documented exit code 2.
#[test]
fn verify_with_nothing_checked_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let output = kaczmarz(
        &["verify", "--suite", "identity", "--instances", "0"],
        dir.path(),
    );
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn dfactor_reports_golden_ratio_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let output = kaczmarz(&["dfactor", "--resolution", "1001"], dir.path());
    assert!(output.status.success());
    let lines = stdout_lines(&output);
    let field = |name: &str| -> f64 {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(&format!("{name} = ")))
            .unwrap_or_else(|| panic!("missing {name}"))
            .parse()
            .unwrap()
    };
    assert!((field("argmax_delta") - 0.618).abs() <= 2e-3);
    assert!((field("argmax_delta_max") - 0.618).abs() <= 2e-3);
    assert!((field("max_improvement") - 0.0902).abs() <= 5e-4);

    let csv = std::fs::read_to_string(dir.path().join("dfactor.csv")).unwrap();
    assert!(csv.starts_with("delta,delta_max,d\n"));
}

#[test]
fn solve_writes_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let output = kaczmarz(
        &[
            "solve",
            "--rows",
            "20",
            "--cols",
            "4",
            "--correlation",
            "0.2",
            "--method",
            "two_subspace",
            "--iterations",
            "30",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "k,row_touches,method,mean_err_sq,min_err_sq,max_err_sq,bound_rk,bound_2srk"
    );
    assert_eq!(lines.len(), 32);
    assert!(lines[1].starts_with("0,0,two_subspace,"));
    assert!(lines[31].starts_with("31,62,") || lines[31].starts_with("30,60,"));
}

#[test]
fn config_file_replaces_the_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"command":"analyze","generator":{"m":30,"n":6,"c":0.5,"seed":11}}"#,
    )
    .unwrap();
    let by_config = kaczmarz(&["--config", config.to_str().unwrap()], dir.path());
    assert!(by_config.status.success());
    let by_flags = kaczmarz(
        &[
            "analyze",
            "--rows",
            "30",
            "--cols",
            "6",
            "--correlation",
            "0.5",
            "--seed",
            "11",
        ],
        dir.path(),
    );
    assert!(by_flags.status.success());
    assert_eq!(by_config.stdout, by_flags.stdout);
}

#[test]
fn usage_errors_exit_one_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bogus"] as &[&str],
        &["analyze"],
        &["analyze", "--rows", "5", "--cols", "9"],
        &["experiment", "--preset", "fig9"],
        &["verify", "--suite", "theorem", "--trials", "10"],
    ] {
        let output = kaczmarz(args, dir.path());
        assert_eq!(output.status.code(), Some(1), "args: {args:?}");
        let stderr = String::from_utf8_lossy(&output.stderr);
        assert_eq!(
            stderr.trim_end().lines().count(),
            1,
            "args: {args:?}, stderr: {stderr}"
        );
    }
}
