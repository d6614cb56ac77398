use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, InterferencePolicy, Method};
use crate::error::{Error, Result};
use crate::metric::{self, format_sig, CurveSummary, RetentionMeasurement};
use crate::predictor::{
    evaluate_predictor, BigramCounter, GbclPredictor, LlmClient, LlmClientConfig, OraclePredictor,
    Predictor,
};
use crate::rng::{derive_seed, tag};
use crate::schedule::{build_sequence, practice_times, ScheduleKind};
use crate::task_gen::{generate_task, TaskSpec, INTERFERENCE_LABEL, TARGET_LABEL};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const SEED_SCHEME: &str = "repeat = derive(seed, [tag(\"repeat\"), n_states, repeat]); \
target = derive(repeat, [tag(\"target\")]); interference j = derive(repeat | seed if fixed, \
[tag(\"interference\"), j]); sequence = derive(repeat, [tag(\"sequence\")]); \
learner = derive(repeat, [tag(\"learner\")]). Method, phi_i and phi_d enter no seed, so \
methods and conditions are paired within a repeat.";

/// One `(phi_i, phi_d, repeat)` grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub phi_i: usize,
    pub phi_d: usize,
    pub repeat: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub repeat: usize,
    pub seed: u64,
    pub target_seed: u64,
    pub interference_seeds: Vec<u64>,
    pub sequence_seed: u64,
    pub learner_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed_scheme: String,
    pub seeds: Vec<SeedRecord>,
    pub cells: usize,
    pub artifacts: Vec<String>,
    pub results_sha256: String,
    pub failures: Vec<CellFailure>,
}

impl RunManifest {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Accept either a bare config or a manifest embedding one.
pub fn load_config(text: &str) -> Result<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let config = match v.get("config") {
        Some(c) if v.get("config_hash").is_some() => c.clone(),
        _ => v,
    };
    let c: ExperimentConfig = serde_json::from_value(config)?;
    c.validate()?;
    Ok(c)
}

pub fn seed_record(config: &ExperimentConfig, repeat: usize) -> SeedRecord {
    let seed = derive_seed(config.seed, &[tag("repeat"), config.n_states as u64, repeat as u64]);
    let interference_base = match config.interference {
        InterferencePolicy::PerSeed => seed,
        InterferencePolicy::Fixed => config.seed,
    };
    SeedRecord {
        repeat,
        seed,
        target_seed: derive_seed(seed, &[tag("target")]),
        interference_seeds: (0..config.n_interference_tasks)
            .map(|j| derive_seed(interference_base, &[tag("interference"), j as u64]))
            .collect(),
        sequence_seed: derive_seed(seed, &[tag("sequence")]),
        learner_seed: derive_seed(seed, &[tag("learner")]),
    }
}

/// Target (id 0) and interference tasks (ids 1..) for one repeat.
pub fn repeat_tasks(config: &ExperimentConfig, rec: &SeedRecord) -> Result<(TaskSpec, Vec<TaskSpec>)> {
    let target = generate_task(config.n_states, 0, TARGET_LABEL, rec.target_seed)?;
    let interference = rec
        .interference_seeds
        .iter()
        .enumerate()
        .map(|(j, &s)| generate_task(config.n_states, j + 1, INTERFERENCE_LABEL, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, interference))
}

pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for phi_i in config.effective_phi_i_grid() {
        for &phi_d in &config.phi_d_grid {
            for repeat in 0..config.repeats {
                out.push(Cell { phi_i, phi_d, repeat });
            }
        }
    }
    out
}

fn make_predictor(
    config: &ExperimentConfig,
    llm: Option<&LlmClient>,
    target: &TaskSpec,
    n_tasks: usize,
    learner_seed: u64,
) -> Result<Box<dyn Predictor>> {
    let bigram = || -> Result<BigramCounter> {
        Ok(BigramCounter::new(config.n_states)?
            .with_alpha(config.alpha)?
            .with_decay(config.decay())?
            .with_mode(config.output_mode))
    };
    Ok(match config.method {
        Method::Sgd | Method::Er | Method::Ewc => {
            let kind = config.method.trainer_kind().expect("gradient method");
            let mut p = GbclPredictor::new(
                kind,
                config.trainer_config(),
                config.n_states,
                n_tasks,
                learner_seed,
            )?;
            p.mode = config.output_mode;
            Box::new(p)
        }
        Method::Bigram | Method::BigramDecay => Box::new(bigram()?),
        Method::BigramAware => Box::new(bigram()?.aware(true)),
        Method::Oracle => Box::new(OraclePredictor::new(target.clone())),
        Method::Llm => Box::new(
            llm.cloned()
                .ok_or_else(|| Error::Config("LLM client not configured".into()))?,
        ),
    })
}

/// Evaluate one cell.
pub fn run_cell(
    config: &ExperimentConfig,
    cell: Cell,
    llm: Option<&LlmClient>,
) -> Result<RetentionMeasurement> {
    let rec = seed_record(config, cell.repeat);
    let (target, interference) = repeat_tasks(config, &rec)?;
    let spec = config.schedule_spec(cell.phi_i);
    let seq = build_sequence(&spec, &target, &interference, cell.phi_d, rec.sequence_seed)?;
    let mut predictor =
        make_predictor(config, llm, &target, interference.len() + 1, rec.learner_seed)?;
    let retention = evaluate_predictor(predictor.as_mut(), &seq, &target)?;
    if !retention.is_finite() {
        return Err(Error::invalid("retention is not finite"));
    }
    let last = practice_times(&spec).last().unwrap_or(0) as usize;
    Ok(RetentionMeasurement {
        method: config.method.name().to_string(),
        n_states: config.n_states,
        schedule: config.schedule,
        with_identifiers: config.with_identifiers,
        phi: config.phi,
        k: config.k,
        phi_i: spec.effective_phi_i(),
        phi_d: cell.phi_d,
        t_eval: last + cell.phi_d,
        seed: rec.seed,
        retention,
    })
}

/// Mean and CI of one condition; a single repeat gets a zero half-width.
pub fn summarize(values: &[f64]) -> Result<CurveSummary> {
    match values.len() {
        1 => Ok(CurveSummary { mean: values[0], ci95: 0.0, n: 1 }),
        _ => metric::aggregate(values),
    }
}

/// One aggregated row per `(phi_i, phi_d)` condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub n_states: usize,
    pub schedule: ScheduleKind,
    pub with_identifiers: bool,
    pub phi: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub phi_i: usize,
    pub phi_d: usize,
    pub t_eval: usize,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
}

pub const SUMMARY_HEADER: &str =
    "method,n_states,schedule,with_identifiers,phi,K,phi_i,phi_d,t_eval,n,mean,ci95";

/// Group rows by condition, keeping first-appearance order.
pub fn summarize_rows(rows: &[RetentionMeasurement], clamp: bool) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<(RetentionMeasurement, Vec<f64>)> = Vec::new();
    for r in rows {
        let same = |g: &RetentionMeasurement| {
            g.method == r.method
                && g.n_states == r.n_states
                && g.schedule == r.schedule
                && g.with_identifiers == r.with_identifiers
                && g.phi == r.phi
                && g.k == r.k
                && g.phi_i == r.phi_i
                && g.phi_d == r.phi_d
        };
        match groups.iter_mut().find(|(g, _)| same(g)) {
            Some((_, v)) => v.push(r.retention),
            None => groups.push((r.clone(), vec![r.retention])),
        }
    }
    groups
        .into_iter()
        .map(|(g, v)| {
            let s = summarize(&v)?;
            let mean = if clamp { s.mean.clamp(0.0, 1.0) } else { s.mean };
            Ok(SummaryRow {
                method: g.method,
                n_states: g.n_states,
                schedule: g.schedule,
                with_identifiers: g.with_identifiers,
                phi: g.phi,
                k: g.k,
                phi_i: g.phi_i,
                phi_d: g.phi_d,
                t_eval: g.t_eval,
                n: s.n,
                mean,
                ci95: s.ci95,
            })
        })
        .collect()
}

pub fn write_summary<W: std::io::Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.n_states.to_string(),
            r.schedule.to_string(),
            r.with_identifiers.to_string(),
            r.phi.to_string(),
            r.k.to_string(),
            r.phi_i.to_string(),
            r.phi_d.to_string(),
            r.t_eval.to_string(),
            r.n.to_string(),
            format_sig(r.mean, 9),
            format_sig(r.ci95, 9),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<RetentionMeasurement>,
    pub summary: Vec<SummaryRow>,
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

/// Evaluate every cell and return rows in grid order, plus failures.
pub fn evaluate_cells(
    config: &ExperimentConfig,
) -> Result<(Vec<RetentionMeasurement>, Vec<CellFailure>)> {
    config.validate()?;
    let llm = match config.method {
        Method::Llm => {
            let mut c: LlmClientConfig = config.llm.clone();
            if c.endpoint.is_empty() {
                c.endpoint = LlmClientConfig::from_env().endpoint;
            }
            Some(LlmClient::new(c)?)
        }
        _ => None,
    };
    let grid = cells(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RetentionMeasurement>> = pool.install(|| {
        grid.par_iter()
            .map(|&cell| run_cell(config, cell, llm.as_ref()))
            .collect()
    });

    let mut rows = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (cell, out) in grid.into_iter().zip(outcomes) {
        match out {
            Ok(r) => rows.push(r),
            // local methods never skip cells
            Err(e) if config.method.is_local() => return Err(e),
            Err(e) => {
                log::warn!("cell {cell:?} failed: {e}");
                failures.push(CellFailure { cell, error: e.to_string() });
            }
        }
    }
    Ok((rows, failures))
}

/// Run the whole grid and write results, summary and manifest into `dir`.
///
/// Remote failures are recorded in the manifest; unless `allow_partial` is
/// set they make the call return [`Error::CellFailures`] after writing.
pub fn run_experiment_in(config: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let (rows, failures) = evaluate_cells(config)?;
    fs::create_dir_all(dir)?;

    let mut results = Vec::new();
    metric::write_measurements(&mut results, &rows)?;
    fs::write(dir.join(RESULTS_FILE), &results)?;

    let summary = summarize_rows(&rows, config.clamp_summary)?;
    let mut buf = Vec::new();
    write_summary(&mut buf, &summary)?;
    fs::write(dir.join(SUMMARY_FILE), &buf)?;

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash()?,
        config: config.clone(),
        seed_scheme: SEED_SCHEME.to_string(),
        seeds: (0..config.repeats).map(|r| seed_record(config, r)).collect(),
        cells: cells(config).len(),
        artifacts: vec![RESULTS_FILE.into(), SUMMARY_FILE.into()],
        results_sha256: hex::encode(Sha256::digest(&results)),
        failures: failures.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;

    if !failures.is_empty() && !config.allow_partial {
        return Err(Error::CellFailures {
            failed: failures.len(),
            total: manifest.cells,
        });
    }
    Ok(RunOutput {
        rows,
        summary,
        manifest,
        dir: dir.to_path_buf(),
    })
}

/// [`run_experiment_in`] using the configured output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_in(config, Path::new(&config.out_dir))
}
