use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{nelder_mead, Bounds, NelderMeadOptions};
use super::{
    activation_from_log_lags, hrs_md, hrs_score, logistic, ActrParams, HumanReference,
    D_BOUNDS, GAMMA_BOUNDS, KAPPA_BOUNDS, S_BOUNDS,
};
use crate::error::{Error, Result};
use crate::metric;
use crate::rng;
use crate::schedule::{practice_times, PracticeSchedule, ScheduleSpec};

/// One measured retention curve: a practice schedule and `(t_eval, R)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub practice: PracticeSchedule,
    pub points: Vec<(f64, f64)>,
}

impl CurveData {
    pub fn new(practice: PracticeSchedule, points: Vec<(f64, f64)>) -> Self {
        CurveData { practice, points }
    }
}

/// How the fitter handles the `kappa`/`gamma` trade-off.
///
/// Predictions depend on `kappa` and `gamma` only through
/// `gamma + d * ln(kappa)`, so `UnitKappa` searches `(d, s, gamma + d ln kappa)`
/// over the image of the full box and reports `kappa = 1` whenever the
/// resulting threshold lies inside the `gamma` bounds. `Free` searches all
/// four coordinates as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gauge {
    #[default]
    UnitKappa,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub gauge: Gauge,
    pub nelder_mead: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 32,
            seed: 0,
            gauge: Gauge::UnitKappa,
            nelder_mead: NelderMeadOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ActrParams,
    pub mse: f64,
    /// `None` where the correlation is undefined (constant or too few points).
    pub per_curve_pearson: Vec<Option<f64>>,
    pub starts_tried: usize,
}

impl FitResult {
    /// Serializable record with the human-similarity scores attached.
    pub fn record(&self, method: &str, reference: &HumanReference) -> Result<FitRecord> {
        let d2 = hrs_md(self.params.theta(), reference);
        Ok(FitRecord {
            method: method.to_string(),
            d: self.params.d,
            s: self.params.s,
            kappa: self.params.kappa,
            gamma: self.params.gamma,
            mse: self.mse,
            pearson: self.per_curve_pearson.clone(),
            hrs_md: d2,
            hrs_score: hrs_score(d2)?,
        })
    }
}

/// On-disk form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub method: String,
    pub d: f64,
    pub s: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub mse: f64,
    pub pearson: Vec<Option<f64>>,
    pub hrs_md: f64,
    pub hrs_score: f64,
}

/// Distinct `(schedule, t)` evaluation point with every measurement taken there.
struct EvalPoint {
    log_lags: Vec<f64>,
    measured: Vec<f64>,
}

struct Problem {
    points: Vec<EvalPoint>,
    n_measurements: usize,
}

impl Problem {
    fn build(curves: &[CurveData]) -> Result<Self> {
        let mut index: HashMap<(&[u64], u64), usize> = HashMap::new();
        let mut points: Vec<EvalPoint> = Vec::new();
        let mut n = 0;
        for c in curves {
            let last = c
                .practice
                .last()
                .ok_or_else(|| Error::invalid("curve has an empty practice schedule"))?;
            for &(t, r) in &c.points {
                if !(t > last as f64) {
                    return Err(Error::invalid(format!(
                        "evaluation time {t} is not after the last practice {last}"
                    )));
                }
                if !r.is_finite() {
                    return Err(Error::invalid("measured retention is not finite"));
                }
                let key = (c.practice.times.as_slice(), t.to_bits());
                let i = *index.entry(key).or_insert_with(|| {
                    points.push(EvalPoint {
                        log_lags: c.practice.times.iter().map(|&ti| (t - ti as f64).ln()).collect(),
                        measured: Vec::new(),
                    });
                    points.len() - 1
                });
                points[i].measured.push(r);
                n += 1;
            }
        }
        if n < 4 {
            return Err(Error::InsufficientSamples { needed: 4, got: n });
        }
        Ok(Problem { points, n_measurements: n })
    }

    fn mse(&self, p: &ActrParams) -> f64 {
        let mut sse = 0.0;
        for pt in &self.points {
            let w = activation_from_log_lags(p.d, p.kappa, &pt.log_lags);
            let r_hat = logistic((w - p.gamma) / p.s);
            sse += pt.measured.iter().map(|r| (r_hat - r).powi(2)).sum::<f64>();
        }
        sse / self.n_measurements as f64
    }
}

/// Range of `gamma + d ln kappa` reachable inside the box at decay `d`.
fn effective_gamma_range(d: f64) -> (f64, f64) {
    (
        GAMMA_BOUNDS.0 + d * KAPPA_BOUNDS.0.ln(),
        GAMMA_BOUNDS.1 + d * KAPPA_BOUNDS.1.ln(),
    )
}

/// Map a unit-kappa search point `[d, s, v]` with `v` in `[0, 1]` to parameters.
fn unit_kappa_params(x: &[f64]) -> ActrParams {
    let (lo, hi) = effective_gamma_range(x[0]);
    canonical(x[0], x[1], lo + x[2] * (hi - lo))
}

/// Parameters with threshold `gamma_eff` at `kappa = 1`, or at the nearest
/// `gamma` bound with `kappa` absorbing the rest.
fn canonical(d: f64, s: f64, gamma_eff: f64) -> ActrParams {
    let gamma = gamma_eff.clamp(GAMMA_BOUNDS.0, GAMMA_BOUNDS.1);
    let kappa = ((gamma_eff - gamma) / d).exp().clamp(KAPPA_BOUNDS.0, KAPPA_BOUNDS.1);
    ActrParams::new(d, s, kappa, gamma)
}

impl ActrParams {
    /// The identifiable threshold `gamma + d ln kappa`.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma + self.d * self.kappa.ln()
    }

    /// Equivalent parameters with `kappa = 1` where the bounds allow it.
    pub fn canonical(&self) -> ActrParams {
        canonical(self.d, self.s, self.effective_gamma())
    }
}

/// Curves generated from `params` over a DP grid, evaluated one slot after
/// each distractor of length `phi_d`, with optional Gaussian noise.
pub fn synthetic_dp_curves(
    params: &ActrParams,
    phi: usize,
    k: usize,
    phi_i_grid: &[usize],
    phi_d_grid: &[usize],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<CurveData>> {
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut r = rng::stream(rng::derive_seed(seed, &[rng::tag("synthetic")]));
    phi_i_grid
        .iter()
        .map(|&phi_i| {
            let practice = practice_times(&ScheduleSpec::dp(phi, k, phi_i));
            let last = practice.last().unwrap_or(0) as f64;
            let points = phi_d_grid
                .iter()
                .map(|&phi_d| {
                    let t = last + phi_d as f64 + 1.0;
                    let clean = super::retention_hat(params, &practice, t)?;
                    Ok((t, clean + noise.sample(&mut r)))
                })
                .collect::<Result<_>>()?;
            Ok(CurveData::new(practice, points))
        })
        .collect()
}

fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(rng::derive_seed(seed, &[rng::tag("lhs")]));
    let mut out = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut r);
        for (point, s) in out.iter_mut().zip(strata) {
            point[j] = (s as f64 + r.random::<f64>()) / n as f64;
        }
    }
    out
}

/// Fit one shared parameter set to all curves by multi-start Nelder–Mead on
/// the pooled mean squared error.
pub fn fit(curves: &[CurveData], opts: &FitOptions) -> Result<FitResult> {
    if opts.starts == 0 {
        return Err(Error::invalid("at least one start is required"));
    }
    let problem = Problem::build(curves)?;

    let (bounds, to_params): (Bounds, fn(&[f64]) -> ActrParams) = match opts.gauge {
        Gauge::UnitKappa => (
            Bounds::new(&[D_BOUNDS, S_BOUNDS, (0.0, 1.0)]),
            unit_kappa_params,
        ),
        Gauge::Free => (Bounds::new(&ActrParams::bounds()), ActrParams::from_slice),
    };
    let starts = latin_hypercube(opts.starts, bounds.dim(), opts.seed);

    let results: Vec<_> = starts
        .par_iter()
        .map(|u| {
            let x0 = bounds.to_box(u);
            nelder_mead(|x| problem.mse(&to_params(x)), &x0, &bounds, &opts.nelder_mead)
        })
        .collect();

    // lowest MSE, earliest start on ties
    let best = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r)
        .expect("at least one start");
    let params = to_params(&best.x);
    let mse = problem.mse(&params);
    if !mse.is_finite() {
        return Err(Error::invalid("fit produced a non-finite error"));
    }

    let per_curve_pearson = curves
        .iter()
        .map(|c| {
            let predicted: Vec<f64> = c
                .points
                .iter()
                .map(|&(t, _)| super::retention_hat(&params, &c.practice, t))
                .collect::<Result<_>>()?;
            let measured: Vec<f64> = c.points.iter().map(|p| p.1).collect();
            Ok(metric::pearson(&predicted, &measured).ok())
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FitResult {
        params,
        mse,
        per_curve_pearson,
        starts_tried: opts.starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actr::retention_hat;

    fn curve(params: &ActrParams, times: Vec<u64>, evals: &[f64]) -> CurveData {
        let practice = PracticeSchedule::new(times).unwrap();
        let points = evals
            .iter()
            .map(|&t| (t, retention_hat(params, &practice, t).unwrap()))
            .collect();
        CurveData::new(practice, points)
    }

    #[test]
    fn canonical_preserves_predictions() {
        let p = ActrParams::new(0.4, 0.7, 3.0, 1.2);
        let c = p.canonical();
        assert_eq!(c.kappa, 1.0);
        let s = PracticeSchedule::new(vec![1, 5, 9]).unwrap();
        for t in [10.0, 50.0, 400.0] {
            let a = retention_hat(&p, &s, t).unwrap();
            let b = retention_hat(&c, &s, t).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        // threshold outside the box keeps gamma on its bound
        let q = ActrParams::new(0.9, 1.0, 10.0, 4.5).canonical();
        assert_eq!(q.gamma, 5.0);
        assert!((q.effective_gamma() - (4.5 + 0.9 * 10f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_or_invalid_data() {
        let p = ActrParams::new(0.5, 1.0, 1.0, 0.0);
        let c = curve(&p, vec![1, 2], &[3.0, 4.0, 5.0]);
        assert!(matches!(
            fit(&[c], &FitOptions::default()),
            Err(Error::InsufficientSamples { needed: 4, got: 3 })
        ));
        let bad = CurveData::new(
            PracticeSchedule::new(vec![1, 2]).unwrap(),
            vec![(2.0, 0.5), (3.0, 0.5), (4.0, 0.5), (5.0, 0.5)],
        );
        assert!(fit(&[bad], &FitOptions::default()).is_err());
    }

    #[test]
    fn flat_curve_flags_undefined_pearson() {
        let c = CurveData::new(
            PracticeSchedule::new(vec![1, 2]).unwrap(),
            (3..9).map(|t| (t as f64, 0.4)).collect(),
        );
        let opts = FitOptions { starts: 4, ..Default::default() };
        let r = fit(&[c], &opts).unwrap();
        assert_eq!(r.per_curve_pearson, vec![None]);
        assert!(r.mse < 1e-6);
        assert_eq!(r.starts_tried, 4);
    }

    #[test]
    fn recovers_small_problem() {
        let truth = ActrParams::new(0.3, 1.0, 1.0, 0.5);
        let c = curve(&truth, (1..=20).collect(), &[21.0, 40.0, 80.0, 160.0, 320.0, 640.0]);
        let r = fit(&[c], &FitOptions::default()).unwrap();
        assert!(r.mse <= 1e-10, "mse {}", r.mse);
        assert!((r.params.d - 0.3).abs() < 1e-3);
        assert!((r.params.effective_gamma() - 0.5).abs() < 1e-2);
    }
}
