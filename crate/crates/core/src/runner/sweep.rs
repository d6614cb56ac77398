use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::run::{run_experiment_in, summarize};
use crate::error::{Error, Result};
use crate::metric::{format_sig, RetentionMeasurement};

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const SWEEP_JSON_FILE: &str = "sweep.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepDimension {
    PhiI,
    EwcLambda,
    RhoDecay,
}

impl SweepDimension {
    pub fn name(self) -> &'static str {
        match self {
            SweepDimension::PhiI => "phi-i",
            SweepDimension::EwcLambda => "ewc-lambda",
            SweepDimension::RhoDecay => "rho-decay",
        }
    }

    /// Config for one grid value.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            SweepDimension::PhiI => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("phi_i {value} is not a whole number")));
                }
                c.phi_i_grid = vec![value as usize];
            }
            SweepDimension::EwcLambda => {
                if base.method != Method::Ewc {
                    return Err(Error::Config("an ewc-lambda sweep needs method ewc".into()));
                }
                c.ewc_lambda = value;
            }
            SweepDimension::RhoDecay => {
                if !matches!(
                    base.method,
                    Method::Bigram | Method::BigramAware | Method::BigramDecay
                ) {
                    return Err(Error::Config("a rho-decay sweep needs a bigram method".into()));
                }
                c.rho_decay = Some(value);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phi-i" | "phi_i" => Ok(SweepDimension::PhiI),
            "ewc-lambda" | "lambda" => Ok(SweepDimension::EwcLambda),
            "rho-decay" | "rho" => Ok(SweepDimension::RhoDecay),
            _ => Err(Error::Config(format!("unknown sweep dimension {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
    /// Per-repeat average retention over the distractor grid, in repeat order.
    pub per_seed: Vec<f64>,
    pub is_argmax: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub dimension: SweepDimension,
    pub method: Method,
    pub points: Vec<SweepPoint>,
    pub argmax_value: f64,
    /// Repeats on which the argmax beats both endpoints; `None` when the
    /// argmax is an endpoint.
    pub interior_wins: Option<usize>,
    pub interior_optimum: bool,
    pub verdict: String,
}

/// Average retention over the distractor grid for each repeat, in seed
/// first-appearance order.
pub fn per_seed_average(rows: &[RetentionMeasurement]) -> Vec<f64> {
    let mut groups: Vec<(u64, f64, usize)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|g| g.0 == r.seed) {
            Some(g) => {
                g.1 += r.retention;
                g.2 += 1;
            }
            None => groups.push((r.seed, r.retention, 1)),
        }
    }
    groups.into_iter().map(|(_, s, n)| s / n as f64).collect()
}

/// Summarize per-value per-seed averages; ties for the maximum go to the
/// first value.
pub fn summarize_sweep(
    dimension: SweepDimension,
    method: Method,
    values: &[f64],
    per_seed: Vec<Vec<f64>>,
) -> Result<SweepSummary> {
    if values.is_empty() || values.len() != per_seed.len() {
        return Err(Error::Config("sweep grid is empty or mismatched".into()));
    }
    let mut points = values
        .iter()
        .zip(per_seed)
        .map(|(&value, seeds)| {
            let s = summarize(&seeds)?;
            Ok(SweepPoint {
                value,
                mean: s.mean,
                ci95: s.ci95,
                n: s.n,
                per_seed: seeds,
                is_argmax: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean > points[best].mean {
            best = i;
        }
    }
    points[best].is_argmax = true;

    let last = points.len() - 1;
    let interior_wins = (best != 0 && best != last).then(|| {
        let b = &points[best].per_seed;
        b.iter()
            .enumerate()
            .filter(|(i, v)| **v > points[0].per_seed[*i] && **v > points[last].per_seed[*i])
            .count()
    });
    let repeats = points[best].per_seed.len();
    let needed = (3 * repeats).div_ceil(4);
    let interior_optimum = interior_wins.is_some_and(|w| w >= needed);
    let verdict = match interior_wins {
        None => "no interior optimum: argmax at an endpoint".to_string(),
        Some(w) if w >= needed => format!(
            "interior optimum at {}: beats both endpoints on {w} of {repeats} repeats",
            points[best].value
        ),
        Some(w) => format!(
            "no interior optimum: argmax {} beats both endpoints on only {w} of {repeats} repeats",
            points[best].value
        ),
    };
    Ok(SweepSummary {
        dimension,
        method,
        argmax_value: points[best].value,
        points,
        interior_wins,
        interior_optimum,
        verdict,
    })
}

pub const SWEEP_HEADER: &str = "dimension,method,value,n,mean,ci95,is_argmax";

pub fn write_sweep_summary<W: std::io::Write>(out: W, s: &SweepSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER.split(','))?;
    for p in &s.points {
        w.write_record([
            s.dimension.name().to_string(),
            s.method.name().to_string(),
            format_sig(p.value, 9),
            p.n.to_string(),
            format_sig(p.mean, 9),
            format_sig(p.ci95, 9),
            p.is_argmax.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run one experiment per grid value under `dir/<dimension>-<value>` and
/// write the sweep summary next to them.
pub fn sweep(
    base: &ExperimentConfig,
    dimension: SweepDimension,
    values: &[f64],
    dir: &Path,
) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut per_seed = Vec::with_capacity(values.len());
    for &v in values {
        let config = dimension.apply(base, v)?;
        let sub = dir.join(format!("{}-{}", dimension.name(), format_sig(v, 9)));
        let out = run_experiment_in(&config, &sub)?;
        per_seed.push(per_seed_average(&out.rows));
    }
    let summary = summarize_sweep(dimension, base.method, values, per_seed)?;
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_sweep_summary(&mut buf, &summary)?;
    fs::write(dir.join(SWEEP_SUMMARY_FILE), buf)?;
    fs::write(dir.join(SWEEP_JSON_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
