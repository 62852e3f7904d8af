#![allow(dead_code)]

use nalgebra::DMatrix;
use opl::oracle::{Assignment, DgpSpec, FeatureDist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            let pivot_row = m[col].clone();
            for (dst, src) in m[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    x
}

/// OLS with intercept through explicit normal equations and elimination.
pub fn ols_oracle(x: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let (n, p) = x.shape();
    let d = p + 1;
    let z = |i: usize, j: usize| if j == 0 { 1.0 } else { x[(i, j - 1)] };
    let xtx: Vec<Vec<f64>> = (0..d)
        .map(|r| (0..d).map(|c| (0..n).map(|i| z(i, r) * z(i, c)).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..d).map(|r| (0..n).map(|i| z(i, r) * y[i]).sum()).collect();
    gauss_solve(&xtx, &xty)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Three arms, two standard-normal features, linear means with crossing
/// slopes, mildly heteroskedastic noise.
pub fn linear_three_arm(n: usize, seed: u64, assignment: Assignment) -> DgpSpec {
    DgpSpec {
        n_units: n,
        n_actions: 3,
        n_features: 2,
        mean_coeffs: vec![
            vec![5.0, 1.0, 0.0],
            vec![5.5, -1.0, 0.5],
            vec![4.5, 0.0, -1.5],
        ],
        mean_quadratic: None,
        noise_scale_coeffs: vec![
            vec![0.5, 0.2, 0.0],
            vec![1.0, 0.0, 0.2],
            vec![0.0, -0.2, 0.1],
        ],
        assignment,
        feature_dist: vec![FeatureDist::Normal, FeatureDist::Normal],
        seed,
    }
}

pub fn mild_logit() -> Assignment {
    Assignment::Logit {
        coeffs: vec![
            vec![0.0, 0.0, 0.0],
            vec![0.2, 0.5, -0.3],
            vec![-0.1, -0.4, 0.4],
        ],
    }
}

/// Two arms: arm 0 pays 2 with unit-scale noise, arm 1 pays 3 with
/// much larger noise.
pub fn tradeoff_two_arm(n: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        n_units: n,
        n_actions: 2,
        n_features: 1,
        mean_coeffs: vec![vec![2.0, 0.3], vec![3.0, 0.3]],
        mean_quadratic: None,
        noise_scale_coeffs: vec![vec![0.5, 0.0], vec![3.0, 0.0]],
        assignment: Assignment::Uniform,
        feature_dist: vec![FeatureDist::Uniform],
        seed,
    }
}

pub fn rel_err(est: f64, truth: f64) -> f64 {
    (est - truth).abs() / truth.abs()
}
