//! Brute-force reference implementations shared by the integration tests.
//! They use dense matrices and LU decompositions so they share no code path
//! with the library's Cholesky-based routines.

#![allow(dead_code)]

use betta::{Dataset, RichnessObservation};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn design(ds: &Dataset) -> DMatrix<f64> {
    let m = ds.m();
    let k = ds.p() + 1;
    DMatrix::from_fn(m, k, |i, j| if j == 0 { 1.0 } else { ds.observations()[i].covariates[j - 1] })
}

/// GLS coefficients at a fixed `σ²_u`.
pub fn gls_beta(ds: &Dataset, sigma_u_sq: f64) -> DVector<f64> {
    let x = design(ds);
    let w = DMatrix::from_diagonal(&DVector::from_iterator(
        ds.m(),
        ds.observations().iter().map(|o| 1.0 / (sigma_u_sq + o.std_error * o.std_error)),
    ));
    let y = DVector::from_iterator(ds.m(), ds.observations().iter().map(|o| o.estimate));
    let xtw = x.transpose() * &w;
    (&xtw * &x).lu().solve(&(xtw * y)).expect("GLS system is singular")
}

/// Restricted log-likelihood written out term by term.
pub fn reml(ds: &Dataset, beta: &DVector<f64>, sigma_u_sq: f64) -> f64 {
    let x = design(ds);
    let mut sum_log = 0.0;
    let mut sum_sq = 0.0;
    let mut info = DMatrix::zeros(x.ncols(), x.ncols());
    for (i, o) in ds.observations().iter().enumerate() {
        let v = sigma_u_sq + o.std_error * o.std_error;
        let xi = x.row(i).transpose();
        let r = o.estimate - xi.dot(beta);
        sum_log += v.ln();
        sum_sq += r * r / v;
        info += &xi * xi.transpose() / v;
    }
    -0.5 * (sum_log + sum_sq + info.lu().determinant().ln())
}

pub fn profiled_reml(ds: &Dataset, sigma_u_sq: f64) -> f64 {
    reml(ds, &gls_beta(ds, sigma_u_sq), sigma_u_sq)
}

/// Best point of an `n`-point equispaced grid on `[lo, hi]`.
pub fn grid_max(ds: &Dataset, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    (0..n)
        .map(|k| {
            let s = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            (s, profiled_reml(ds, s))
        })
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Grid search refined by repeated zooming onto the neighbourhood of the best
/// cell, reaching spacing far below the coarse grid's.
pub fn zoom_grid_max(ds: &Dataset, hi: f64, n: usize, rounds: usize) -> (f64, f64) {
    let (mut lo_b, mut hi_b) = (0.0, hi);
    let mut best = grid_max(ds, lo_b, hi_b, n);
    for _ in 0..rounds {
        let step = (hi_b - lo_b) / (n - 1) as f64;
        lo_b = (best.0 - step).max(0.0);
        hi_b = (best.0 + step).min(hi);
        let cand = grid_max(ds, lo_b, hi_b, n);
        if cand.1 >= best.1 {
            best = cand;
        }
    }
    best
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Random dataset with `m` rows and `p` uniform covariates.
pub fn random_dataset(rng: &mut ChaCha8Rng, m: usize, p: usize) -> Dataset {
    let obs = (0..m)
        .map(|i| {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c = 500.0 + x.iter().sum::<f64>() * 20.0 + rng.random_range(-150.0..150.0);
            RichnessObservation::new(format!("s{i}"), c, rng.random_range(5.0..60.0), x)
        })
        .collect();
    Dataset::new(obs, (0..p).map(|j| format!("x{j}")).collect()).unwrap()
}
