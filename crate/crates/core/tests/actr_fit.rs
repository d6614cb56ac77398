use iccl_core::actr::{self, ActrParams, FitOptions, Gauge, HumanReference};
use iccl_core::schedule::PracticeSchedule;
use proptest::prelude::*;

mod common;

use common::{dp_grid as grid, pooled_mse, random_truth, PHI_I};

#[test]
fn zero_noise_recovery_on_dp_grid() {
    let truth = ActrParams::new(0.3, 1.0, 1.0, 0.5);
    let r = actr::fit(&grid(&truth, 0.0, 1), &FitOptions::default()).unwrap();
    assert!(r.mse <= 1e-10, "mse {}", r.mse);
    assert_eq!(r.params.kappa, 1.0);
    assert!((r.params.d - truth.d).abs() < 1e-6, "{:?}", r.params);
    assert!((r.params.s - truth.s).abs() < 1e-6, "{:?}", r.params);
    assert!((r.params.gamma - truth.gamma).abs() < 1e-6, "{:?}", r.params);
    assert!(r.per_curve_pearson.iter().all(|p| p.unwrap() > 0.999_999));
}

#[test]
fn noisy_fit_reaches_at_least_the_truth_error() {
    // the fitted optimum can never be worse than the generating parameters
    for draw in 0..10u64 {
        let truth = random_truth(1000 + draw);
        let curves = grid(&truth, 0.02, 2000 + draw);
        let r = actr::fit(&curves, &FitOptions { seed: draw, ..Default::default() }).unwrap();
        assert!(r.mse <= pooled_mse(&truth, &curves) + 1e-12, "draw {draw}");
        assert!(r.params.in_bounds());
    }
}

#[test]
fn free_gauge_matches_unit_kappa_predictions() {
    let truth = ActrParams::new(0.45, 0.8, 2.5, 0.3);
    let curves = grid(&truth, 0.0, 3);
    let free = actr::fit(&curves, &FitOptions { gauge: Gauge::Free, ..Default::default() }).unwrap();
    assert!(free.mse <= 1e-8, "mse {}", free.mse);
    assert!((free.params.effective_gamma() - truth.effective_gamma()).abs() < 1e-2);
}

#[test]
fn fit_is_deterministic() {
    let truth = random_truth(7);
    let curves = grid(&truth, 0.02, 9);
    let a = actr::fit(&curves, &FitOptions::default()).unwrap();
    let b = actr::fit(&curves, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fit_record_serializes_expected_fields() {
    let truth = ActrParams::new(0.3, 1.0, 1.0, 0.5);
    let r = actr::fit(&grid(&truth, 0.0, 1), &FitOptions { starts: 4, ..Default::default() }).unwrap();
    let rec = r.record("sgd", &HumanReference::bundled()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
    for key in ["method", "d", "s", "kappa", "gamma", "mse", "pearson", "hrs_md", "hrs_score"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["pearson"].as_array().unwrap().len(), PHI_I.len());
}

#[test]
fn golden_hrs_md_rows_reproduce() {
    let r = HumanReference::bundled();
    // (d, s, gamma, golden HRS-MD, tolerance)
    let rows = [
        ("LLAMA3", [0.14, 2.00, 1.01], 500.22, 3.0),
        ("DEEPSEEK-R1", [0.35, 1.69, -0.24], 302.39, 0.05),
        ("RWKV-7", [0.27, 1.62, 0.59], 287.57, 0.05),
        ("MAMBA", [0.29, 1.59, 0.33], 272.74, 3.0),
        ("SGD", [0.41, 2.00, 0.15], 445.07, 0.05),
        ("ER", [0.27, 2.00, 1.02], 466.74, 0.05),
        ("EWC", [0.22, 2.00, 1.65], 481.53, 0.05),
    ];
    for (name, theta, expected, tol) in rows {
        let d2 = actr::hrs_md(theta, &r);
        assert!((d2 - expected).abs() <= tol, "{name}: {d2} vs {expected}");
    }
}

fn schedule_strategy() -> impl Strategy<Value = Vec<u64>> {
    proptest::collection::btree_set(1u64..500, 1..20).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn activation_decreases_after_last_practice(
        times in schedule_strategy(),
        d in 0.01f64..1.0,
        kappa in 0.01f64..10.0,
        gap in 1.0f64..100.0,
        step in 0.5f64..100.0,
    ) {
        let p = ActrParams::new(d, 1.0, kappa, 0.0);
        let s = PracticeSchedule::new(times).unwrap();
        let t = s.last().unwrap() as f64 + gap;
        prop_assert!(actr::activation(&p, &s, t + step).unwrap() < actr::activation(&p, &s, t).unwrap());
    }

    #[test]
    fn extra_practice_raises_activation(
        times in schedule_strategy(),
        d in 0.01f64..1.0,
        kappa in 0.01f64..10.0,
        gap in 1.0f64..100.0,
    ) {
        let p = ActrParams::new(d, 1.0, kappa, 0.0);
        let last = *times.last().unwrap();
        let s = PracticeSchedule::new(times.clone()).unwrap();
        let mut more = times;
        more.push(last + 1);
        let s2 = PracticeSchedule::new(more).unwrap();
        let t = last as f64 + 1.0 + gap;
        prop_assert!(actr::activation(&p, &s2, t).unwrap() > actr::activation(&p, &s, t).unwrap());
    }

    #[test]
    fn retention_monotone_in_activation_and_threshold(
        d in 0.01f64..1.0,
        s in 0.05f64..2.0,
        offset in -5.0f64..5.0,
        dg in 0.01f64..1.0,
    ) {
        // keep the logistic away from floating-point saturation
        let sched = PracticeSchedule::new(vec![1, 2, 3]).unwrap();
        let w = actr::activation(&ActrParams::new(d, s, 1.0, 0.0), &sched, 4.0).unwrap();
        let p = ActrParams::new(d, s, 1.0, w + offset * s);
        let gamma = p.gamma;
        let q = ActrParams { gamma: gamma + dg, ..p };
        let near = actr::retention_hat(&p, &sched, 4.0).unwrap();
        let far = actr::retention_hat(&p, &sched, 40.0).unwrap();
        prop_assert!(near > far);
        prop_assert!(actr::retention_hat(&q, &sched, 4.0).unwrap() < near);
    }

    #[test]
    fn hrs_md_scale_invariant(
        theta in proptest::array::uniform3(-3.0f64..3.0),
        scale in proptest::array::uniform3(0.1f64..10.0),
    ) {
        let r = HumanReference::bundled();
        let d0 = actr::hrs_md(theta, &r);
        let mut scaled = r.clone();
        let mut t2 = theta;
        for j in 0..3 {
            scaled.sigma[j] *= scale[j];
            t2[j] = r.mu[j] + (theta[j] - r.mu[j]) * scale[j];
        }
        let d1 = actr::hrs_md(t2, &scaled);
        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
    }
}
