mod common;

use common::{linear_three_arm, mild_logit, rng};
use nalgebra::DMatrix;
use opl::moments::{
    build_arm_moments, default_variance_floor, estimate_conditional_means,
    estimate_conditional_variance, LearnerSpec,
};
use opl::oracle::generate;
use opl::Dataset;
use proptest::prelude::*;
use rand::Rng;

/// Brute-force mean and variance of the outcomes in each (arm, x) cell.
fn cell_stats(d: &Dataset, a: usize, x: f64) -> (f64, f64) {
    let ys: Vec<f64> = (0..d.n_units())
        .filter(|&i| d.actions[i] == a && d.features[(i, 0)] == x)
        .map(|i| d.outcomes[i])
        .collect();
    let n = ys.len() as f64;
    let m = ys.iter().sum::<f64>() / n;
    // plug-in (population) variance, matching E[Y^2] - E[Y]^2
    let v = ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
    (m, v)
}

/// Y = X + (1 + X) eps with X in {0, 1}, two arms sharing the same law.
fn heteroskedastic(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let x = DMatrix::from_fn(n, 1, |_, _| f64::from(u8::from(r.random::<bool>())));
    let actions: Vec<usize> = (0..n).map(|_| usize::from(r.random::<bool>())).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = r.sample(rand_distr::StandardNormal);
            x[(i, 0)] + (1.0 + x[(i, 0)]) * e + actions[i] as f64
        })
        .collect();
    Dataset::new(y, actions, x, 2).unwrap()
}

#[test]
fn saturated_binary_design_reproduces_cell_means() {
    let d = heteroskedastic(2_000, 3);
    let mu = estimate_conditional_means(&d, &LearnerSpec::Linear).unwrap();
    for i in 0..d.n_units() {
        for a in 0..2 {
            let (m, _) = cell_stats(&d, a, d.features[(i, 0)]);
            assert!((mu[(i, a)] - m).abs() < 1e-8);
        }
    }
}

#[test]
fn heteroskedastic_cell_variance_within_five_percent() {
    let d = heteroskedastic(50_000, 4);
    let m = build_arm_moments(&d, &LearnerSpec::Linear, 1e-8).unwrap();
    let unit = (0..d.n_units()).find(|&i| d.features[(i, 0)] == 1.0).unwrap();
    for a in 0..2 {
        let (cm, cv) = cell_stats(&d, a, 1.0);
        assert!((m.sigma2[(unit, a)] - cv).abs() / cv < 0.05);
        assert!((m.mu[(unit, a)] - cm).abs() / cm.abs() < 0.05);
        assert!((m.sigma[(unit, a)] - cv.sqrt()).abs() / cv.sqrt() < 0.05);
        // also against the generating law: sd 2 in the X = 1 cell
        assert!((m.sigma[(unit, a)] - 2.0).abs() < 0.1);
    }
}

#[test]
fn arm_mean_predictions_average_to_subsample_mean() {
    let od = generate(&linear_three_arm(3_000, 9, mild_logit())).unwrap();
    let d = &od.dataset;
    let mu = estimate_conditional_means(d, &LearnerSpec::Linear).unwrap();
    for a in 0..3 {
        let rows = d.arm_rows(a);
        let pred: f64 = rows.iter().map(|&i| mu[(i, a)]).sum::<f64>() / rows.len() as f64;
        let obs: f64 = rows.iter().map(|&i| d.outcomes[i]).sum::<f64>() / rows.len() as f64;
        assert!((pred - obs).abs() < 1e-8);
    }
}

#[test]
fn variance_floor_holds_everywhere() {
    let od = generate(&linear_three_arm(2_000, 10, mild_logit())).unwrap();
    let d = &od.dataset;
    let floor = default_variance_floor(&d.outcomes);
    let v = estimate_conditional_variance(d, &LearnerSpec::Linear, floor).unwrap();
    assert!(v.sigma2.iter().all(|&s| s >= floor));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn affine_shift_moves_means_only(seed in 0u64..1000, c in -20.0f64..20.0) {
        let od = generate(&linear_three_arm(600, seed, mild_logit())).unwrap();
        let d = &od.dataset;
        let shifted = d.with_outcomes(d.outcomes.iter().map(|y| y + c).collect()).unwrap();
        let floor = 1e-12;
        let a = build_arm_moments(d, &LearnerSpec::Linear, floor).unwrap();
        let b = build_arm_moments(&shifted, &LearnerSpec::Linear, floor).unwrap();
        for i in 0..d.n_units() {
            for k in 0..3 {
                prop_assert!((b.mu[(i, k)] - a.mu[(i, k)] - c).abs() < 1e-8);
                if a.sigma2[(i, k)] > floor && b.sigma2[(i, k)] > floor {
                    // second-moment algebra cancels the shift up to rounding in E[Y^2]
                    let scale = 1.0 + (a.mu[(i, k)] + c).powi(2);
                    prop_assert!((b.sigma2[(i, k)] - a.sigma2[(i, k)]).abs() < 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn positive_scaling_scales_moments(seed in 0u64..1000, c in 0.1f64..10.0) {
        let od = generate(&linear_three_arm(600, seed, mild_logit())).unwrap();
        let d = &od.dataset;
        let scaled = d.with_outcomes(d.outcomes.iter().map(|y| y * c).collect()).unwrap();
        let fa = default_variance_floor(&d.outcomes);
        let fb = default_variance_floor(&scaled.outcomes);
        let a = build_arm_moments(d, &LearnerSpec::Linear, fa).unwrap();
        let b = build_arm_moments(&scaled, &LearnerSpec::Linear, fb).unwrap();
        for i in 0..d.n_units() {
            for k in 0..3 {
                prop_assert!((b.mu[(i, k)] - c * a.mu[(i, k)]).abs() < 1e-8 * (1.0 + b.mu[(i, k)].abs()));
                if a.sigma2[(i, k)] > fa && b.sigma2[(i, k)] > fb {
                    let scale = 1.0 + b.mu[(i, k)].powi(2);
                    prop_assert!((b.sigma2[(i, k)] - c * c * a.sigma2[(i, k)]).abs() < 1e-8 * scale);
                }
            }
        }
    }
}
