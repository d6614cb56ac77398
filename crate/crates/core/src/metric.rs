//! Distribution distances, the normalized retention score, and summary
//! statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;
use crate::task_gen::{ground_truth_row, TaskSpec};

/// Additive smoothing applied to both arguments before the Bhattacharyya
/// coefficient: `p'(y) = (p(y) + eps) / (1 + n * eps)`.
pub const SMOOTHING_EPS: f64 = 1e-9;

const SUM_TOL: f64 = 1e-9;
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("distribution entries must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!("distribution sums to {sum}")));
        }
        Ok(Distribution(probs))
    }

    /// Normalize non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be non-negative with a positive sum"));
        }
        Distribution::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn one_hot(y: usize, n_states: usize) -> Result<Distribution> {
    if y >= n_states {
        return Err(Error::invalid(format!("state {y} out of range for {n_states} states")));
    }
    let mut v = vec![0.0; n_states];
    v[y] = 1.0;
    Ok(Distribution(v))
}

fn smoothed(p: f64, n: usize) -> f64 {
    (p + SMOOTHING_EPS) / (1.0 + n as f64 * SMOOTHING_EPS)
}

fn coefficient(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len();
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (smoothed(a, n) * smoothed(b, n)).sqrt())
        .sum()
}

/// Bhattacharyya distance `-ln sum_y sqrt(p(y) q(y))` of the smoothed inputs.
pub fn bhattacharyya(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok((-coefficient(&p.0, &q.0).ln()).max(0.0))
}

/// Rescaled Bhattacharyya score, oriented so that a perfect estimate scores 1
/// and the uniform estimate scores 0. Worse-than-uniform estimates go negative.
pub fn normalized_performance(p_hat: &Distribution, p_star: &Distribution) -> Result<f64> {
    Ok(1.0 - literal_performance(p_hat, p_star)?)
}

/// The rescaling read literally: 0 for a perfect estimate, 1 for uniform.
pub fn literal_performance(p_hat: &Distribution, p_star: &Distribution) -> Result<f64> {
    let uniform = Distribution::uniform(p_star.len());
    let d_self = bhattacharyya(p_star, p_star)?;
    let d_hat = bhattacharyya(p_hat, p_star)?;
    let d_unif = bhattacharyya(&uniform, p_star)?;
    let denom = (d_self - d_unif).exp() - 1.0;
    if denom.abs() < DEGENERATE_TOL {
        return Err(Error::DegenerateReference);
    }
    Ok(((d_self - d_hat).exp() - 1.0) / denom)
}

/// How the per-state scores are averaged into one retention value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateWeighting {
    #[default]
    Uniform,
    /// Weight states by the target chain's stationary distribution.
    Stationary,
}

/// Average normalized performance over every state of the target task.
pub fn retention(predictions: &[(usize, Distribution)], target: &TaskSpec) -> Result<f64> {
    retention_weighted(predictions, target, StateWeighting::Uniform)
}

pub fn retention_weighted(
    predictions: &[(usize, Distribution)],
    target: &TaskSpec,
    weighting: StateWeighting,
) -> Result<f64> {
    let n = target.n_states;
    let mut per_state: Vec<Option<&Distribution>> = vec![None; n];
    for (x, p) in predictions {
        let slot = per_state
            .get_mut(*x)
            .ok_or_else(|| Error::invalid(format!("prediction for out-of-range state {x}")))?;
        if slot.is_some() {
            return Err(Error::invalid(format!("duplicate prediction for state {x}")));
        }
        *slot = Some(p);
    }
    let weights = match weighting {
        StateWeighting::Uniform => vec![1.0 / n as f64; n],
        StateWeighting::Stationary => stationary(target),
    };
    let mut total = 0.0;
    for (x, p) in per_state.iter().enumerate() {
        let p = p.ok_or_else(|| Error::invalid(format!("missing prediction for state {x}")))?;
        let truth = Distribution::new(ground_truth_row(target, x)?)?;
        total += weights[x] * normalized_performance(p, &truth)?;
    }
    Ok(total)
}

/// Stationary distribution by power iteration on the lazy chain.
fn stationary(task: &TaskSpec) -> Vec<f64> {
    let n = task.n_states;
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (i, row) in task.transition.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                next[j] += pi[i] * 0.5 * p;
            }
            next[i] += 0.5 * pi[i];
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| p / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
}

/// Mean and 95% Student-t confidence half-width.
pub fn aggregate(values: &[f64]) -> Result<CurveSummary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok(CurveSummary {
        mean,
        ci95: t * var.sqrt() / (n as f64).sqrt(),
        n,
    })
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Unweighted mean retention over a distractor-length curve.
pub fn average_retention(curve: &[RetentionMeasurement]) -> Result<f64> {
    mean(&curve.iter().map(|m| m.retention).collect::<Vec<_>>())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("pearson inputs differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: a.len() });
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return Err(Error::UndefinedCorrelation);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// One-sided exact sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are excluded by the caller.
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // log-space binomial coefficients stay exact enough for n in the thousands
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut p = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            p += (ln_choose + ln_half_n).exp();
        }
    }
    p.min(1.0)
}

/// Paired sign test of `a` against `b`; returns `(wins, losses, p_value)`.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    (wins, losses, sign_test(wins, losses))
}

/// One evaluated retention value with the condition that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionMeasurement {
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
    pub seed: u64,
    pub retention: f64,
}

pub const CSV_HEADER: &str =
    "method,n_states,schedule,with_identifiers,phi,K,phi_i,phi_d,t_eval,seed,retention";

/// Format with at most `digits` significant digits, `%g` style.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_measurements<W: Write>(out: W, rows: &[RetentionMeasurement]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
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
            r.seed.to_string(),
            format_sig(r.retention, 9),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements<R: Read>(input: R) -> Result<Vec<RetentionMeasurement>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let missing: Vec<&str> = CSV_HEADER
        .split(',')
        .filter(|col| !headers.iter().any(|h| h == *col))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing columns: {}", missing.join(", "))));
    }
    rdr.deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
