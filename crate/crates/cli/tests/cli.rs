use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn ibl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibl")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

#[test]
fn auc_from_columns() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("s.csv");
    let labels = dir.path().join("l.csv");
    fs::write(&scores, "score\n0.1\n0.4\n0.35\n0.8\n").unwrap();
    fs::write(&labels, "0\n0\n1\n1\n").unwrap();
    let out = ibl(&["auc", "--scores", scores.to_str().unwrap(), "--labels", labels.to_str().unwrap()]);
    assert!(out.status.success());
    // pairs (pos, neg): 0.35>0.1, 0.35<0.4, 0.8>0.1, 0.8>0.4
    assert_eq!(stdout(&out).trim().parse::<f64>().unwrap(), 0.75);

    fs::write(&labels, "0\n2\n1\n1\n").unwrap();
    let bad = ibl(&["auc", "--scores", scores.to_str().unwrap(), "--labels", labels.to_str().unwrap()]);
    assert!(!bad.status.success());
}

fn probe(dir: &std::path::Path) -> PathBuf {
    let path = dir.join("probe.csv");
    fs::write(&path, "a,b,c,d,target\n1,-1,2,0,1\n0.5,0.5,0.5,0.5,0\n").unwrap();
    path
}

#[test]
fn validate_model_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let probe = probe(dir.path());
    let good = core_fixture("codemodels/pseudo.3655.10.ibl.0.txt");
    let out = ibl(&["validate-model", "--source", good.to_str().unwrap(), "--probe", probe.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().next(), Some("ok"));

    let bad = core_fixture("codemodels/pseudo.failure.parse.txt");
    let out = ibl(&["validate-model", "--source", bad.to_str().unwrap(), "--probe", probe.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout(&out).lines().next(), Some("parse_failure"));
}

#[test]
fn validate_guest_model_with_runner() {
    let dir = tempfile::tempdir().unwrap();
    let probe = probe(dir.path());
    let source = dir.path().join("m.py");
    fs::write(&source, "def predict(x):\n    return x\n").unwrap();
    let runner = core_fixture("fake_runner.py");
    let out = ibl(&[
        "validate-model",
        "--source",
        source.to_str().unwrap(),
        "--probe",
        probe.to_str().unwrap(),
        "--dialect",
        "guest",
        "--runner",
        "python3",
        runner.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_results_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{
            "dataset": {"kind": "moons", "n": 120, "noise": 0.2},
            "seeds": [3655],
            "train_sizes": [10, 20],
            "methods": ["ibl", "logistic", "knn"],
            "n_generations": 2,
            "dialect": "expression",
            "backend": {"kind": "scripted", "responses": [
                "sigmoid(Feature_1 - Feature_2)", "not a model",
                "clamp(0.5 + 0.3 * Feature_1)", "sigmoid(Feature_1)"
            ]},
            "output_dir": "out"
        }"#,
    )
    .unwrap();
    let base = dir.path().to_str().unwrap();
    let out = ibl(&["run", "--config", cfg.to_str().unwrap(), "--base", base]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("cells=6 ran=6 skipped=0 aborted=0 requests=4"), "{}", stdout(&out));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 7);

    // the script is exhausted, so only a resume that skips every cell succeeds
    let again = ibl(&["run", "--config", cfg.to_str().unwrap(), "--base", base, "--resume"]);
    assert!(stdout(&again).starts_with("cells=6 ran=0 skipped=6"), "{}", stdout(&again));
    assert_eq!(fs::read_to_string(dir.path().join("out/results.csv")).unwrap(), results);

    let replay = ibl(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--base",
        base,
        "--backend",
        "replay",
        "--fixtures",
        dir.path().join("out/attempts").to_str().unwrap(),
        "--output",
        "replayed",
    ]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(fs::read_to_string(dir.path().join("replayed/results.csv")).unwrap(), results);
}

#[test]
fn prompt_prints_rows() {
    let dir = tempfile::tempdir().unwrap();
    let probe = probe(dir.path());
    let out = ibl(&["prompt", "--data", probe.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("a,b,c,d,target\n1,-1,2,0,1\n0.5,0.5,0.5,0.5,0"), "{text}");
}

#[test]
fn missing_config_fails() {
    let out = ibl(&["run", "--config", "/nonexistent/cfg.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading config"));
}
