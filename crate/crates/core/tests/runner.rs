use std::fs;

use iccl_core::actr::{self, ActrParams, FitOptions, HumanReference};
use iccl_core::metric::{self, read_measurements, write_measurements, RetentionMeasurement};
use iccl_core::predictor::mock::{completion, MockServer};
use iccl_core::predictor::LlmClientConfig;
use iccl_core::runner::{
    self, fit_actr, load_config, measured_curves, read_results, report, run_experiment_in, sweep,
    ExperimentConfig, Method, SweepDimension, MANIFEST_FILE, RESULTS_FILE, SUMMARY_FILE,
};
use iccl_core::schedule::{build_sequence, practice_times, render_prompt, ScheduleKind, ScheduleSpec};
use iccl_core::Error;

fn small(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        phi_i_grid: vec![10, 200],
        phi_d_grid: vec![0, 300, 700],
        ..Default::default()
    }
}

#[test]
fn grid_arithmetic_gives_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment_in(&small(Method::BigramAware), dir.path()).unwrap();
    assert_eq!(out.rows.len(), 2 * 3 * 16);
    assert_eq!(out.manifest.cells, 96);
    assert_eq!(out.summary.len(), 6);
    let on_disk = read_measurements(fs::File::open(dir.path().join(RESULTS_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.len(), 96);
    assert!(dir.path().join(SUMMARY_FILE).exists());
}

#[test]
fn rerun_from_manifest_is_bit_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let config = ExperimentConfig { repeats: 4, ..small(Method::Sgd) };
    run_experiment_in(&config, a.path()).unwrap();

    let manifest = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
    let mut again = load_config(&manifest).unwrap();
    assert_eq!(again, config);
    run_experiment_in(&again, b.path()).unwrap();
    again.jobs = 3;
    run_experiment_in(&again, c.path()).unwrap();

    let bytes = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    for f in [RESULTS_FILE, SUMMARY_FILE] {
        assert_eq!(bytes(&a, f), bytes(&b, f), "{f}");
        assert_eq!(bytes(&a, f), bytes(&c, f), "{f} with jobs = 3");
    }
}

#[test]
fn summary_means_equal_aggregate_of_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment_in(&small(Method::BigramDecay), dir.path()).unwrap();
    for s in &out.summary {
        let vals: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.phi_i == s.phi_i && r.phi_d == s.phi_d)
            .map(|r| r.retention)
            .collect();
        let agg = metric::aggregate(&vals).unwrap();
        assert_eq!(s.n, agg.n);
        assert_eq!(s.mean, agg.mean);
        assert_eq!(s.ci95, agg.ci95);
    }
}

#[test]
fn methods_share_tasks_and_sequences_within_a_repeat() {
    let a = runner::seed_record(&small(Method::Sgd), 3);
    let b = runner::seed_record(&small(Method::BigramAware), 3);
    assert_eq!(a, b);
    assert_ne!(a, runner::seed_record(&small(Method::Sgd), 4));
}

#[test]
fn non_dp_schedules_ignore_the_interval_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        schedule: ScheduleKind::Sp,
        repeats: 2,
        ..small(Method::Bigram)
    };
    let out = run_experiment_in(&config, dir.path()).unwrap();
    assert_eq!(out.rows.len(), 3 * 2);
    assert!(out.rows.iter().all(|r| r.phi_i == 0 && r.t_eval == 100 + r.phi_d));
}

#[test]
fn constant_predictor_sweep_is_flat_with_first_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig { repeats: 3, ..small(Method::Oracle) };
    let s = sweep(&config, SweepDimension::PhiI, &[10.0, 50.0, 100.0], dir.path()).unwrap();
    assert!(s.points.iter().all(|p| p.mean == 1.0 && p.ci95 == 0.0));
    assert_eq!(s.argmax_value, 10.0);
    assert!(!s.interior_optimum);
    assert!(dir.path().join("sweep_summary.csv").exists());
    assert!(dir.path().join("phi-i-50").join(RESULTS_FILE).exists());
}

#[test]
fn decay_bigram_interval_sweep_reports_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig { method: Method::BigramDecay, ..Default::default() };
    let grid: Vec<f64> = config.phi_i_grid.iter().map(|&v| v as f64).collect();
    let s = sweep(&config, SweepDimension::PhiI, &grid, dir.path()).unwrap();
    println!("decay-bigram phi_i sweep: {}", s.verdict);
    assert_eq!(s.points.iter().filter(|p| p.is_argmax).count(), 1);
    let wins = s.interior_wins.unwrap_or(0);
    assert_eq!(s.interior_optimum, s.interior_wins.is_some() && wins >= 12);
}

fn llm_config(url: &str) -> ExperimentConfig {
    ExperimentConfig {
        method: Method::Llm,
        phi: 10,
        k: 2,
        phi_i_grid: vec![10],
        phi_d_grid: vec![0, 100],
        repeats: 2,
        llm: LlmClientConfig {
            endpoint: url.to_string(),
            model: "mock".into(),
            max_retries: 0,
            backoff_base_secs: 0.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Longest prompt any zero-distractor cell of `config` renders.
fn short_prompt_limit(config: &ExperimentConfig) -> usize {
    (0..config.repeats)
        .map(|r| {
            let rec = runner::seed_record(config, r);
            let (t, i) = runner::repeat_tasks(config, &rec).unwrap();
            let seq = build_sequence(&config.schedule_spec(10), &t, &i, 0, rec.sequence_seed).unwrap();
            (0..config.n_states)
                .map(|x| render_prompt(&seq, x).unwrap().len())
                .max()
                .unwrap()
        })
        .max()
        .unwrap()
}

fn failing_long_prompts(limit: usize) -> MockServer {
    let ok = completion(&["1"]);
    MockServer::start(move |body| {
        let len = body["messages"][0]["content"].as_str().map_or(0, str::len);
        if len > limit {
            (400, serde_json::json!({"error": "context too long"}))
        } else {
            (200, ok.clone())
        }
    })
    .unwrap()
}

#[test]
fn remote_failures_are_recorded_and_fail_the_run() {
    let limit = short_prompt_limit(&llm_config(""));
    let server = failing_long_prompts(limit);
    let config = llm_config(server.url());
    let dir = tempfile::tempdir().unwrap();

    let err = run_experiment_in(&config, dir.path()).unwrap_err();
    assert!(matches!(err, Error::CellFailures { failed: 2, total: 4 }), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    let failures = manifest["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 2);
    assert!(failures.iter().all(|f| f["cell"]["phi_d"] == 100));

    let partial = ExperimentConfig { allow_partial: true, ..config };
    let out = run_experiment_in(&partial, dir.path()).unwrap();
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows.iter().all(|r| r.phi_d == 0 && r.retention.is_finite()));
}

#[test]
fn unreachable_endpoints_and_invalid_configs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig { method: Method::Llm, ..llm_config("http://127.0.0.1:9") };
    assert!(run_experiment_in(&config, dir.path()).is_err());
    let bad = ExperimentConfig { n_states: 1, ..small(Method::Sgd) };
    assert!(matches!(run_experiment_in(&bad, dir.path()), Err(Error::Config(_))));
}

fn synthetic_rows(params: &ActrParams, method: &str) -> Vec<RetentionMeasurement> {
    let mut rows = Vec::new();
    for n_states in [4, 8] {
        for phi_i in [10, 50, 100, 200, 400, 600] {
            let spec = ScheduleSpec::dp(100, 5, phi_i);
            let practice = practice_times(&spec);
            let last = practice.last().unwrap() as usize;
            for phi_d in [0, 100, 200, 300, 400, 500, 600, 700] {
                let t_eval = last + phi_d;
                let r = actr::retention_hat(params, &practice, (t_eval + 1) as f64).unwrap();
                rows.push(RetentionMeasurement {
                    method: method.into(),
                    n_states,
                    schedule: ScheduleKind::Dp,
                    with_identifiers: true,
                    phi: 100,
                    k: 5,
                    phi_i,
                    phi_d,
                    t_eval,
                    seed: 7,
                    retention: r,
                });
            }
        }
    }
    rows
}

#[test]
fn fit_recovers_parameters_from_a_synthetic_csv() {
    let truth = ActrParams::new(0.4, 0.8, 1.0, -1.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synthetic.csv");
    let mut rows = synthetic_rows(&truth, "synthetic");
    rows.extend(synthetic_rows(&ActrParams::new(0.2, 0.5, 1.0, 0.0), "other"));
    write_measurements(fs::File::create(&path).unwrap(), &rows).unwrap();

    let back = read_results(&[path]).unwrap();
    let fits = fit_actr(&back, Some("synthetic"), &FitOptions::default(), &HumanReference::default())
        .unwrap();
    assert_eq!(fits.len(), 1);
    let f = &fits[0];
    assert_eq!(f.curves.len(), 12);
    // values pass through 9 significant digits on disk
    assert!(f.record.mse < 1e-12, "{}", f.record.mse);
    assert!((f.record.d - 0.4).abs() < 1e-3, "{:?}", f.record);
    assert!((f.record.s - 0.8).abs() < 1e-3);
    assert!((f.record.gamma + 1.5).abs() < 1e-2);
    assert_eq!(f.record.pearson.len(), 12);
}

#[test]
fn fit_and_report_on_decay_bigram_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for ids in [true, false] {
        let config = ExperimentConfig {
            method: Method::BigramDecay,
            repeats: 4,
            phi_i_grid: vec![10, 200, 600],
            with_identifiers: ids,
            ..Default::default()
        };
        let sub = dir.path().join(format!("ids-{ids}"));
        rows.extend(run_experiment_in(&config, &sub).unwrap().rows);
    }
    let opts = FitOptions { starts: 8, ..Default::default() };
    let fits = fit_actr(&rows, None, &opts, &HumanReference::default()).unwrap();
    assert_eq!(fits.len(), 1);
    let rec = &fits[0].record;
    assert!(rec.mse.is_finite() && !rec.pearson.is_empty());
    assert!(rec.hrs_md.is_finite() && rec.hrs_score > 0.0);

    let records: Vec<_> = fits.iter().map(|f| f.record.clone()).collect();
    let out = dir.path().join("report");
    let files = report(&rows, Some(&records), &out).unwrap();

    let blocks = fs::read_to_string(&files.blocks).unwrap();
    assert!(blocks.starts_with("method,n_states,schedule,with_identifiers,phi,K,phi_i,role,start,end"));
    // five target blocks, four interference blocks and a distractor per curve
    assert_eq!(blocks.lines().count(), 1 + 6 * 10);
    assert!(blocks.contains("bigram-decay,4,dp,true,100,5,200,interference,101,300"));

    let diff = fs::read_to_string(&files.identifier_diff).unwrap();
    assert_eq!(diff.lines().count(), 2);
    let with: Vec<f64> = rows.iter().filter(|r| r.with_identifiers).map(|r| r.retention).collect();
    let without: Vec<f64> = rows.iter().filter(|r| !r.with_identifiers).map(|r| r.retention).collect();
    let expected = metric::mean(&with).unwrap() - metric::mean(&without).unwrap();
    let got: f64 = diff.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((got - expected).abs() < 1e-8);

    let sweet = fs::read_to_string(&files.sweet_spot).unwrap();
    assert_eq!(sweet.lines().filter(|l| l.ends_with(",true")).count(), 2);

    let overlay = fs::read_to_string(files.overlay.unwrap()).unwrap();
    let points: usize = measured_curves(&rows).unwrap().iter().map(|c| c.points.len()).sum();
    assert_eq!(overlay.lines().count(), 1 + points);
    assert!(overlay.lines().next().unwrap().ends_with("phi_d,t_eval,measured,fitted"));

    let curves = fs::read_to_string(&files.curves).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 3 * 8);
}

#[test]
fn missing_columns_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "method,n_states,retention\nsgd,4,0.5\n").unwrap();
    match read_results(&[path]) {
        Err(Error::Schema(msg)) => {
            assert!(msg.contains("t_eval") && msg.contains("phi_i") && msg.contains("schedule"), "{msg}")
        }
        other => panic!("expected schema error, got {other:?}"),
    }
}
