use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
classes = 3
seed = 4

[synth]
classes = 3
videos = 12
frames = 8
dims = 8
objects = 3

[schedule]
counts = [2, 4]

[head_train]
epochs = 2
batch_size = 4

[gate_train]
epochs = 2

[ablation]
budgets = [2, 8]
beta_steps = 2
"#;

fn vidgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidgate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vidgate(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("error line");
    let v: serde_json::Value = serde_json::from_str(last).expect("error line is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, TINY).unwrap();
    let (train, test) = (tmp.path().join("train"), tmp.path().join("test"));
    let model = tmp.path().join("model.gvgm");
    let out = tmp.path().join("out");
    let c = s(&cfg);

    ok(&["synth", "--config", c, "--out", s(&train)]);
    ok(&["synth", "--config", c, "--out", s(&test), "--split", "1"]);
    assert_eq!(fs::read_dir(&train).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "gvgf").count(), 12);

    ok(&["train-head", "--config", c, "--data", s(&train), "--model", s(&model)]);
    // gates are needed for gated inference
    let e = vidgate(&["infer", "--config", c, "--data", s(&test), "--model", s(&model), "--out", s(&out)]);
    assert_eq!(error_kind(&e), "mode");

    ok(&["train-gates", "--config", c, "--data", s(&train), "--model", s(&model)]);
    let line = ok(&["infer", "--config", c, "--data", s(&test), "--model", s(&model), "--out", s(&out)]);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert!(v["avg_frames"].as_f64().unwrap() <= 4.0);
    for f in ["records.json", "report.json", "report_gates.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = fs::read(out.join("report.json")).unwrap();

    let out2 = tmp.path().join("out2");
    ok(&["report", "--config", c, "--data", s(&test), "--model", s(&model), "--out", s(&out2), "--records", s(&out.join("records.json"))]);
    assert_eq!(fs::read(out2.join("report.json")).unwrap(), report);

    let ev = ok(&["eval", "--config", c, "--data", s(&test), "--model", s(&model)]);
    let ev: serde_json::Value = serde_json::from_str(ev.trim()).unwrap();
    assert!(ev["all_frames"].is_number() && ev["gated"].is_number());

    let csv = ok(&["ablate", "--config", c, "--data", s(&test), "--model", s(&model), "--out", s(&out), "--train", s(&train)]);
    assert!(csv.starts_with("policy,theta_2,theta_8\n"));
    assert!(csv.lines().any(|l| l.starts_with("gated,")));

    ok(&["explain", "--config", c, "--data", s(&test), "--model", s(&model), "--out", s(&out)]);
    let ex: serde_json::Value = serde_json::from_slice(&fs::read(out.join("explanations.json")).unwrap()).unwrap();
    let first = &ex[0]["frames"][0];
    assert_eq!(first["objects"].as_array().unwrap().len(), 3);
}

#[test]
fn errors_are_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(error_kind(&vidgate(&["train-head"])), "cli");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[schedule]\ncounts = [3, 1]\n").unwrap();
    let e = vidgate(&["synth", "--config", s(&bad), "--out", s(tmp.path())]);
    assert_eq!(error_kind(&e), "config");

    let model = tmp.path().join("m.gvgm");
    fs::write(&model, b"nope").unwrap();
    let e = vidgate(&["eval", "--data", s(tmp.path()), "--model", s(&model)]);
    // the empty data directory is reported first
    assert_eq!(error_kind(&e), "empty");

    fs::write(tmp.path().join("x.gvgf"), b"GVGF").unwrap();
    let e = vidgate(&["train-head", "--data", s(tmp.path()), "--model", s(&model)]);
    assert_eq!(error_kind(&e), "empty");
}
