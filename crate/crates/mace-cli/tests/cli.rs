use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;

fn mace() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mace"))
}

fn setup(dir: &Path) {
    let run = |args: &[&str]| {
        let out = mace().current_dir(dir).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["synth", "--rows", "400", "--seed", "3", "--data", "d.csv", "--schema", "s.json"]);
    run(&["train-model", "--data", "d.csv", "--schema", "s.json", "--rounds", "25", "--out", "model.json"]);
}

#[test]
fn full_flow_produces_artifacts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    let out = mace()
        .current_dir(dir.path())
        .args(["prepare", "--data", "d.csv", "--schema", "s.json", "--out", "prep.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let prep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("prep.json")).unwrap()).unwrap();
    assert_eq!(prep["version"], 1);
    assert_eq!(prep["class_count"], 2);

    let out = mace()
        .current_dir(dir.path())
        .args([
            "explain", "--data", "d.csv", "--schema", "s.json", "--model", "model.json",
            "--row", "0", "--seed", "9", "--out", "report.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["report"]["examples"].as_array().unwrap().len() >= 1);
    // the echoed config reflects the flag override
    assert_eq!(report["config"]["seed"], 9);
}

#[test]
fn evaluate_writes_per_method_records() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = mace()
        .current_dir(dir.path())
        .args([
            "evaluate", "--data", "d.csv", "--schema", "s.json", "--model", "model.json",
            "--limit", "5", "--methods", "mace_rl,greedy_baseline", "--out", "evals",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["mace_rl", "greedy_baseline"] {
        let path = dir.path().join("evals").join(format!("eval_{name}.json"));
        let run: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(run["records"].as_array().unwrap().len(), 5);
        assert!(run["metrics"]["validity"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn config_file_sets_values_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    fs::write(
        dir.path().join("run.toml"),
        "data = \"d.csv\"\nschema = \"s.json\"\nmodel = \"model.json\"\nseed = 4\n\n[rl]\nepochs = 2\n",
    )
    .unwrap();

    let out = mace()
        .current_dir(dir.path())
        .args(["explain", "--config", "run.toml", "--row", "0", "--out", "r1.json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r1: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r1.json")).unwrap()).unwrap();
    assert_eq!(r1["config"]["seed"], 4);
    assert_eq!(r1["config"]["rl"]["epochs"], 2);

    let out = mace()
        .current_dir(dir.path())
        .args(["explain", "--config", "run.toml", "--row", "0", "--seed", "11", "--out", "r2.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let r2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r2.json")).unwrap()).unwrap();
    assert_eq!(r2["config"]["seed"], 11);
}

#[test]
fn what_if_query_is_explained() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    fs::write(
        dir.path().join("q.json"),
        r#"{"Age": 24, "Education": "School", "Gender": "Female", "Working hours": 25,
            "Marital": "Single", "Occupation": "Service", "Race": "Other", "Workclass": "Private"}"#,
    )
    .unwrap();
    let out = mace()
        .current_dir(dir.path())
        .args([
            "explain", "--data", "d.csv", "--schema", "s.json", "--model", "model.json",
            "--what-if", "q.json", "--out", "report.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("target class 1"), "{stdout}");
}

#[test]
fn usage_errors_exit_2() {
    let out = mace().args(["explain", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = mace().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_1_with_message() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    fs::write(dir.path().join("bad.csv"), "Age,income\n40,1\n").unwrap();
    let out = mace()
        .current_dir(dir.path())
        .args(["prepare", "--data", "bad.csv", "--schema", "s.json", "--out", "p.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "{stderr}");

    // unknown category names the offending line
    fs::write(
        dir.path().join("bad2.csv"),
        fs::read_to_string(dir.path().join("d.csv"))
            .unwrap()
            .replacen("Married", "Widowed", 1),
    )
    .unwrap();
    let out = mace()
        .current_dir(dir.path())
        .args(["prepare", "--data", "bad2.csv", "--schema", "s.json", "--out", "p.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn unknown_target_class_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let out = mace()
        .current_dir(dir.path())
        .args([
            "explain", "--data", "d.csv", "--schema", "s.json", "--model", "model.json",
            "--row", "0", "--target", "7",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_check_talks_to_a_scorer() {
    use mace_core::remote::serve_connection;
    use mace_core::synth::{census_schema, generate_census};

    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        let ds = generate_census(400, 3);
        let model = mace_core::BoostedStumps::train(&ds, 25, 0.5).unwrap();
        let (stream, _) = listener.accept().unwrap();
        let _ = serve_connection(stream, &model, &census_schema());
    });

    let out = mace()
        .current_dir(dir.path())
        .args([
            "serve-check", "--scorer", &addr.to_string(), "--schema", "s.json",
            "--data", "d.csv", "--row", "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("answered"), "{stdout}");
    drop(server);
}
