use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{summarize, summarize_rows, write_summary, SummaryRow};
use super::sweep::per_seed_average;
use crate::actr::{self, ActrParams, CurveData, FitOptions, FitRecord, FitResult, HumanReference};
use crate::error::{Error, Result};
use crate::metric::{self, format_sig, RetentionMeasurement};
use crate::schedule::{practice_times, Block, Role, ScheduleKind, ScheduleSpec};

pub const CURVES_FILE: &str = "retention_curves.csv";
pub const BLOCKS_FILE: &str = "curve_blocks.csv";
pub const IDENTIFIER_DIFF_FILE: &str = "identifier_diff.csv";
pub const SWEET_SPOT_FILE: &str = "sweet_spot.csv";
pub const OVERLAY_FILE: &str = "actr_overlay.csv";

pub fn read_results(paths: &[PathBuf]) -> Result<Vec<RetentionMeasurement>> {
    let mut rows = Vec::new();
    for p in paths {
        let f = fs::File::open(p)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))?;
        rows.extend(metric::read_measurements(f)?);
    }
    Ok(rows)
}

/// Identity of one measured curve: everything but the distractor length.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CurveKey {
    pub method: String,
    pub n_states: usize,
    pub schedule: ScheduleKind,
    pub with_identifiers: bool,
    pub phi: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub phi_i: usize,
}

impl CurveKey {
    fn of(r: &RetentionMeasurement) -> Self {
        CurveKey {
            method: r.method.clone(),
            n_states: r.n_states,
            schedule: r.schedule,
            with_identifiers: r.with_identifiers,
            phi: r.phi,
            k: r.k,
            phi_i: r.phi_i,
        }
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec::new(self.schedule, self.phi, self.k, self.phi_i)
            .with_identifiers(self.with_identifiers)
    }
}

/// Seed-averaged points of one curve, as `(phi_d, t_eval, mean R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCurve {
    pub key: CurveKey,
    pub points: Vec<(usize, usize, f64)>,
}

impl MeasuredCurve {
    /// ACT-R data: evaluation one slot after the context.
    pub fn to_curve_data(&self) -> CurveData {
        CurveData::new(
            practice_times(&self.key.spec()),
            self.points.iter().map(|&(_, t, r)| ((t + 1) as f64, r)).collect(),
        )
    }
}

/// Group rows into seed-averaged curves, ordered by key and `phi_d`.
pub fn measured_curves(rows: &[RetentionMeasurement]) -> Result<Vec<MeasuredCurve>> {
    let mut groups: BTreeMap<CurveKey, BTreeMap<usize, (usize, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        let key = CurveKey::of(r);
        let last = practice_times(&key.spec())
            .last()
            .ok_or_else(|| Error::Schema("row describes an empty schedule".into()))?
            as usize;
        if r.t_eval != last + r.phi_d {
            return Err(Error::Schema(format!(
                "t_eval {} disagrees with the schedule ({} + phi_d {})",
                r.t_eval, last, r.phi_d
            )));
        }
        groups
            .entry(key)
            .or_default()
            .entry(r.phi_d)
            .or_insert_with(|| (r.t_eval, Vec::new()))
            .1
            .push(r.retention);
    }
    groups
        .into_iter()
        .map(|(key, pts)| {
            let points = pts
                .into_iter()
                .map(|(phi_d, (t, v))| Ok((phi_d, t, metric::mean(&v)?)))
                .collect::<Result<_>>()?;
            Ok(MeasuredCurve { key, points })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodFit {
    pub method: String,
    pub curves: Vec<MeasuredCurve>,
    pub fit: FitResult,
    pub record: FitRecord,
}

/// Fit one parameter set per method over all of its curves.
pub fn fit_actr(
    rows: &[RetentionMeasurement],
    method_filter: Option<&str>,
    opts: &FitOptions,
    reference: &HumanReference,
) -> Result<Vec<MethodFit>> {
    let curves = measured_curves(rows)?;
    let mut by_method: BTreeMap<String, Vec<MeasuredCurve>> = BTreeMap::new();
    for c in curves {
        if method_filter.is_none_or(|m| m == c.key.method) {
            by_method.entry(c.key.method.clone()).or_default().push(c);
        }
    }
    if by_method.is_empty() {
        return Err(Error::Config("no rows match the method filter".into()));
    }
    by_method
        .into_iter()
        .map(|(method, curves)| {
            let data: Vec<CurveData> = curves.iter().map(|c| c.to_curve_data()).collect();
            let fit = actr::fit(&data, opts)?;
            let record = fit.record(&method, reference)?;
            Ok(MethodFit { method, curves, fit, record })
        })
        .collect()
}

pub fn write_fit_records(path: &Path, records: &[FitRecord]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

pub fn read_fit_records(path: &Path) -> Result<Vec<FitRecord>> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Block layout of a schedule followed by a distractor of `phi_d`, without
/// sampling any states.
pub fn block_layout(spec: &ScheduleSpec, phi_d: usize) -> Vec<Block> {
    let mut lens: Vec<(Role, usize)> = Vec::new();
    match spec.kind {
        ScheduleKind::Sp => lens.push((Role::Target, spec.phi)),
        ScheduleKind::Mp => lens.push((Role::Target, spec.k * spec.phi)),
        ScheduleKind::Dp => {
            for rep in 0..spec.k {
                lens.push((Role::Target, spec.phi));
                if rep + 1 < spec.k || spec.trailing_interference {
                    lens.push((Role::Interference, spec.phi_i));
                }
            }
        }
    }
    lens.push((Role::Distractor, phi_d));
    let mut start = 1;
    lens.into_iter()
        .filter(|(_, len)| *len > 0)
        .map(|(role, len)| {
            let b = Block { role, start, end: start + len - 1 };
            start += len;
            b
        })
        .collect()
}

/// Paths of the files a report wrote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub curves: PathBuf,
    pub blocks: PathBuf,
    pub identifier_diff: PathBuf,
    pub sweet_spot: PathBuf,
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierDiff {
    pub method: String,
    pub n_states: usize,
    pub schedule: ScheduleKind,
    pub with_mean: f64,
    pub without_mean: f64,
    pub diff: f64,
}

type WithWithout = (Vec<f64>, Vec<f64>);

pub fn identifier_diffs(rows: &[RetentionMeasurement]) -> Result<Vec<IdentifierDiff>> {
    let mut groups: BTreeMap<(String, usize, ScheduleKind), WithWithout> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.method.clone(), r.n_states, r.schedule)).or_default();
        if r.with_identifiers {
            g.0.push(r.retention);
        } else {
            g.1.push(r.retention);
        }
    }
    groups
        .into_iter()
        .filter(|(_, (w, wo))| !w.is_empty() && !wo.is_empty())
        .map(|((method, n_states, schedule), (w, wo))| {
            let with_mean = metric::mean(&w)?;
            let without_mean = metric::mean(&wo)?;
            Ok(IdentifierDiff {
                method,
                n_states,
                schedule,
                with_mean,
                without_mean,
                diff: with_mean - without_mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotRow {
    pub method: String,
    pub n_states: usize,
    pub with_identifiers: bool,
    pub phi_i: usize,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
    pub is_argmax: bool,
}

/// Average retention over the distractor grid per DP interval, with the
/// first maximal interval flagged per curve family.
pub fn sweet_spot(rows: &[RetentionMeasurement]) -> Result<Vec<SweetSpotRow>> {
    let mut groups: BTreeMap<(String, usize, bool), BTreeMap<usize, Vec<RetentionMeasurement>>> =
        BTreeMap::new();
    for r in rows.iter().filter(|r| r.schedule == ScheduleKind::Dp) {
        groups
            .entry((r.method.clone(), r.n_states, r.with_identifiers))
            .or_default()
            .entry(r.phi_i)
            .or_default()
            .push(r.clone());
    }
    let mut out = Vec::new();
    for ((method, n_states, with_identifiers), by_phi) in groups {
        let first = out.len();
        for (phi_i, rs) in by_phi {
            let s = summarize(&per_seed_average(&rs))?;
            out.push(SweetSpotRow {
                method: method.clone(),
                n_states,
                with_identifiers,
                phi_i,
                n: s.n,
                mean: s.mean,
                ci95: s.ci95,
                is_argmax: false,
            });
        }
        let mut best = first;
        for i in first..out.len() {
            if out[i].mean > out[best].mean {
                best = i;
            }
        }
        out[best].is_argmax = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub key: CurveKey,
    pub phi_d: usize,
    pub t_eval: usize,
    pub measured: f64,
    pub fitted: f64,
}

/// Pair each seed-averaged point with the fitted curve of its method.
pub fn overlay(rows: &[RetentionMeasurement], fits: &[FitRecord]) -> Result<Vec<OverlayRow>> {
    let mut out = Vec::new();
    for c in measured_curves(rows)? {
        let Some(f) = fits.iter().find(|f| f.method == c.key.method) else { continue };
        let params = ActrParams::new(f.d, f.s, f.kappa, f.gamma);
        let practice = practice_times(&c.key.spec());
        for &(phi_d, t, r) in &c.points {
            out.push(OverlayRow {
                key: c.key.clone(),
                phi_d,
                t_eval: t,
                measured: r,
                fitted: actr::retention_hat(&params, &practice, (t + 1) as f64)?,
            });
        }
    }
    Ok(out)
}

fn write_csv(path: &Path, header: &[&str], records: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Write every plot-ready data file into `dir`.
pub fn report(rows: &[RetentionMeasurement], fits: Option<&[FitRecord]>, dir: &Path) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::Config("no result rows to report".into()));
    }
    fs::create_dir_all(dir)?;
    let g = |v: f64| format_sig(v, 9);

    let curves: Vec<SummaryRow> = summarize_rows(rows, false)?;
    let curves_path = dir.join(CURVES_FILE);
    write_summary(fs::File::create(&curves_path)?, &curves)?;

    let mut layouts: BTreeMap<CurveKey, usize> = BTreeMap::new();
    for r in rows {
        let e = layouts.entry(CurveKey::of(r)).or_insert(0);
        *e = (*e).max(r.phi_d);
    }
    let mut block_rows = Vec::new();
    for (key, max_phi_d) in &layouts {
        for b in block_layout(&key.spec(), *max_phi_d) {
            block_rows.push(vec![
                key.method.clone(),
                key.n_states.to_string(),
                key.schedule.to_string(),
                key.with_identifiers.to_string(),
                key.phi.to_string(),
                key.k.to_string(),
                key.phi_i.to_string(),
                b.role.to_string(),
                b.start.to_string(),
                b.end.to_string(),
            ]);
        }
    }
    let blocks_path = dir.join(BLOCKS_FILE);
    write_csv(
        &blocks_path,
        &["method", "n_states", "schedule", "with_identifiers", "phi", "K", "phi_i", "role", "start", "end"],
        block_rows,
    )?;

    let diff_path = dir.join(IDENTIFIER_DIFF_FILE);
    write_csv(
        &diff_path,
        &["method", "n_states", "schedule", "with_mean", "without_mean", "diff"],
        identifier_diffs(rows)?
            .into_iter()
            .map(|d| {
                vec![d.method, d.n_states.to_string(), d.schedule.to_string(), g(d.with_mean), g(d.without_mean), g(d.diff)]
            })
            .collect(),
    )?;

    let sweet_path = dir.join(SWEET_SPOT_FILE);
    write_csv(
        &sweet_path,
        &["method", "n_states", "with_identifiers", "phi_i", "n", "mean", "ci95", "is_argmax"],
        sweet_spot(rows)?
            .into_iter()
            .map(|s| {
                vec![
                    s.method,
                    s.n_states.to_string(),
                    s.with_identifiers.to_string(),
                    s.phi_i.to_string(),
                    s.n.to_string(),
                    g(s.mean),
                    g(s.ci95),
                    s.is_argmax.to_string(),
                ]
            })
            .collect(),
    )?;

    let overlay_path = match fits {
        Some(f) => {
            let p = dir.join(OVERLAY_FILE);
            write_csv(
                &p,
                &["method", "n_states", "schedule", "with_identifiers", "phi", "K", "phi_i", "phi_d", "t_eval", "measured", "fitted"],
                overlay(rows, f)?
                    .into_iter()
                    .map(|o| {
                        vec![
                            o.key.method,
                            o.key.n_states.to_string(),
                            o.key.schedule.to_string(),
                            o.key.with_identifiers.to_string(),
                            o.key.phi.to_string(),
                            o.key.k.to_string(),
                            o.key.phi_i.to_string(),
                            o.phi_d.to_string(),
                            o.t_eval.to_string(),
                            g(o.measured),
                            g(o.fitted),
                        ]
                    })
                    .collect(),
            )?;
            Some(p)
        }
        None => None,
    };

    Ok(ReportFiles {
        curves: curves_path,
        blocks: blocks_path,
        identifier_diff: diff_path,
        sweet_spot: sweet_path,
        overlay: overlay_path,
    })
}
