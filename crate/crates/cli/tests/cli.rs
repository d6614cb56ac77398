use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iccl-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bench(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn hrs_of_golden_parameters() {
    let out = ok(&["hrs", "--d", "0.27", "--s", "1.62", "--gamma", "0.59"]);
    assert!(out.contains("hrs_md=287.5794"), "{out}");
    let out = ok(&["hrs", "--d", "0.35", "--s", "1.69", "--gamma", "-0.24"]);
    assert!(out.contains("hrs_md=302.39"), "{out}");
    assert!(!bench(&["hrs", "--d", "0.3"]).status.success());
}

#[test]
fn run_then_rerun_from_manifest_with_more_workers() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&[
        "run", "--method", "ewc", "--phi-i", "10,200", "--phi-d-grid", "0,100", "--repeats", "3",
        "--out", p(&a),
    ]);
    assert!(out.starts_with("12 rows, 0 failed cells"), "{out}");
    let manifest = a.join("manifest.json");
    ok(&["run", "--config", p(&manifest), "--jobs", "2", "--out", p(&b)]);
    for f in ["results.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"method": "bigram", "schedule": "mp", "phi": 20, "K": 3, "repeats": 2}"#).unwrap();
    let out_dir = dir.path().join("r");
    ok(&["run", "--config", p(&cfg), "--phi-d-grid", "0,50", "--no-identifiers", "--out", p(&out_dir)]);
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("bigram,4,mp,false,20,3,0,")));
    fs::write(&cfg, r#"{"methd": "bigram"}"#).unwrap();
    assert!(!bench(&["run", "--config", p(&cfg)]).status.success());
}

#[test]
fn fit_hrs_and_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["run", "--method", "bigram-aware", "--phi-i", "10,600", "--repeats", "2", "--out", p(&run)]);
    let fits = dir.path().join("fits.json");
    let results = run.join("results.csv");
    let out = ok(&["fit-actr", "--input", p(&results), "--starts", "4", "--out", p(&fits)]);
    assert!(out.starts_with("bigram-aware: d="), "{out}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fits).unwrap()).unwrap();
    let rec = &json[0];
    for key in ["method", "d", "s", "kappa", "gamma", "mse", "pearson", "hrs_md", "hrs_score"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
    assert!(ok(&["hrs", "--fit", p(&fits)]).starts_with("bigram-aware: hrs_md="));

    let rep = dir.path().join("rep");
    ok(&["report", "--input", p(&results), "--fits", p(&fits), "--out", p(&rep)]);
    for f in ["retention_curves.csv", "curve_blocks.csv", "identifier_diff.csv", "sweet_spot.csv", "actr_overlay.csv"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    assert!(!bench(&["fit-actr", "--input", p(&results), "--method", "sgd", "--out", p(&fits)]).status.success());
}

#[test]
fn gen_tasks_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-tasks", "--n-states", "8", "--repeats", "2", "--out", p(dir.path())]);
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tasks/repeat-001.json")).unwrap()).unwrap();
    assert_eq!(doc["target"]["transition"].as_array().unwrap().len(), 8);
    assert_eq!(doc["interference"][0]["task_id"], 1);

    let sw = dir.path().join("sweep");
    let out = ok(&[
        "sweep", "--method", "oracle", "--dimension", "phi-i", "--values", "10,50", "--phi-d-grid", "0",
        "--repeats", "2", "--out", p(&sw),
    ]);
    assert!(out.contains("no interior optimum"), "{out}");
    assert!(sw.join("sweep_summary.csv").exists());
}

#[test]
fn bad_input_exits_nonzero() {
    assert!(!bench(&["run", "--method", "adam"]).status.success());
    assert!(!bench(&["run", "--phi-d-grid", "900", "--out", "/nonexistent/x"]).status.success());
    assert!(!bench(&["report", "--input", "/nonexistent.csv"]).status.success());
}
