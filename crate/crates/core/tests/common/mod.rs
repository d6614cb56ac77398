#![allow(dead_code)]

use iccl_core::actr::{self, ActrParams, CurveData};
use iccl_core::gbcl::{grad_cross_entropy, init_params, ParamGroup, Sample};
use iccl_core::metric::{bhattacharyya, normalized_performance, Distribution};
use iccl_core::rng;
use iccl_core::schedule::{practice_times, ScheduleSpec};
use rand::Rng;

pub const PHI_I: [usize; 6] = [10, 50, 100, 200, 400, 600];
pub const PHI_D: [usize; 8] = [0, 100, 200, 300, 400, 500, 600, 700];

pub fn dp_grid(params: &ActrParams, noise: f64, seed: u64) -> Vec<CurveData> {
    actr::synthetic_dp_curves(params, 100, 5, &PHI_I, &PHI_D, noise, seed).unwrap()
}

/// Random truth whose curves avoid saturation: the threshold sits within half
/// a noise unit of the activation at a mid-grid evaluation time.
pub fn random_truth(seed: u64) -> ActrParams {
    let mut r = rng::stream(seed);
    let d = r.random_range(0.2..0.8);
    let s = r.random_range(0.3..1.5);
    let probe = ActrParams::new(d, s, 1.0, 0.0);
    let practice = practice_times(&ScheduleSpec::dp(100, 5, 200));
    let t = practice.last().unwrap() as f64 + 301.0;
    let w = actr::activation(&probe, &practice, t).unwrap();
    ActrParams::new(d, s, 1.0, w + r.random_range(-0.5..0.5) * s)
}

pub fn pooled_mse(p: &ActrParams, curves: &[CurveData]) -> f64 {
    let mut sse = 0.0;
    let mut n = 0usize;
    for c in curves {
        for &(t, r) in &c.points {
            sse += (actr::retention_hat(p, &c.practice, t).unwrap() - r).powi(2);
            n += 1;
        }
    }
    sse / n as f64
}

/// Largest relative error between the analytic gradient and central
/// differences (step 1e-5) over `coords` coordinates spread across every
/// parameter group, for one random weighted batch. Embedding coordinates are
/// drawn from rows the batch actually uses.
pub fn gradient_check(seed: u64, coords: usize) -> (f64, Vec<(ParamGroup, f64)>) {
    let mut r = rng::stream(seed);
    let n_states = if r.random_bool(0.5) { 4 } else { 8 };
    let params = init_params(n_states, 2, seed).unwrap();
    let len = r.random_range(1..=4);
    let batch: Vec<Sample> = (0..len)
        .map(|_| {
            Sample::new(
                r.random_range(0..n_states),
                r.random_range(0..2),
                r.random_range(0..n_states),
            )
        })
        .collect();
    let weights: Vec<f64> = (0..len).map(|_| r.random_range(0.1..2.0)).collect();
    let grad = grad_cross_entropy(&params, &batch, &weights).unwrap();

    let embed = params.shape.embed;
    let h = 1e-5;
    let mut worst = vec![0.0f64; ParamGroup::ALL.len()];
    for k in 0..coords {
        let gi = k % ParamGroup::ALL.len();
        let g = ParamGroup::ALL[gi];
        let range = params.shape.range(g);
        let offset = match g {
            ParamGroup::StateEmbedding => batch[r.random_range(0..len)].x * embed + r.random_range(0..embed),
            ParamGroup::TaskEmbedding => batch[r.random_range(0..len)].task * embed + r.random_range(0..embed),
            _ => r.random_range(0..range.len()),
        };
        let i = range.start + offset;
        let mut plus = params.clone();
        plus.data[i] += h;
        let mut minus = params.clone();
        minus.data[i] -= h;
        let numeric = (plus.mean_loss(&batch, &weights).unwrap()
            - minus.mean_loss(&batch, &weights).unwrap())
            / (2.0 * h);
        let analytic = grad.data[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst[gi] = worst[gi].max(rel);
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    (max, ParamGroup::ALL.into_iter().zip(worst).collect())
}

/// Random distribution drawn from the flat Dirichlet, with strictly positive
/// entries so it never coincides with the uniform reference.
pub fn random_distribution<R: Rng>(r: &mut R, n: usize) -> Distribution {
    let w: Vec<f64> = (0..n).map(|_| -r.random_range(f64::EPSILON..1.0).ln()).collect();
    Distribution::from_weights(w).unwrap()
}

#[derive(Debug, Default)]
pub struct MetricSuite {
    pub anchor_failures: usize,
    pub monotone_failures: usize,
    pub symmetry_failures: usize,
    pub negative_distances: usize,
}

impl MetricSuite {
    pub fn passed(&self) -> bool {
        self.anchor_failures + self.monotone_failures + self.symmetry_failures + self.negative_distances
            == 0
    }
}

/// Anchors `R(p*, p*) = 1`, `R(U, p*) = 0`, monotone decay along the straight
/// path from `p*` to uniform (ordering tolerance 1e-12), and symmetry and
/// non-negativity of the distance, over `cases` random draws.
pub fn metric_suite(cases: usize, seed: u64) -> MetricSuite {
    let mut r = rng::stream(seed);
    let mut out = MetricSuite::default();
    for _ in 0..cases {
        let n = r.random_range(2..=8);
        let star = random_distribution(&mut r, n);
        let u = Distribution::uniform(n);
        if normalized_performance(&star, &star).unwrap() != 1.0
            || normalized_performance(&u, &star).unwrap() != 0.0
        {
            out.anchor_failures += 1;
        }
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let lam = k as f64 / 20.0;
            let p: Vec<f64> =
                star.probs().iter().zip(u.probs()).map(|(a, b)| (1.0 - lam) * a + lam * b).collect();
            let v = normalized_performance(&Distribution::new(p).unwrap(), &star).unwrap();
            if v > prev + 1e-12 {
                out.monotone_failures += 1;
                break;
            }
            prev = v;
        }
        let q = random_distribution(&mut r, n);
        let (a, b) = (bhattacharyya(&star, &q).unwrap(), bhattacharyya(&q, &star).unwrap());
        if a != b {
            out.symmetry_failures += 1;
        }
        if a < 0.0 {
            out.negative_distances += 1;
        }
    }
    out
}
