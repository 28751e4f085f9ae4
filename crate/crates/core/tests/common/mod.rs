#![allow(dead_code)]

use dpols_core::{Dataset, RngStream};
use nalgebra::{DMatrix, DVector};

pub fn gaussian_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.standard_normal()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.standard_normal() * 3.0).collect();
    Dataset::new(x, y, d).unwrap()
}

/// Random weights in [0, 1] with roughly `zero_frac` exact zeros.
pub fn random_weights(n: usize, zero_frac: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.uniform() < zero_frac { 0.0 } else { 0.05 + 0.95 * rng.uniform() })
        .collect()
}

pub fn design(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(data.n(), data.d(), data.covariates())
}

/// Direct normal-equation solution through a general LU inverse.
pub struct DirectFit {
    pub s_inv: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub hat: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

pub fn direct_fit(data: &Dataset, w: &[f64]) -> DirectFit {
    let x = design(data);
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let s = x.transpose() * &wm * &x;
    let s_inv = s.lu().try_inverse().expect("invertible");
    let y = DVector::from_column_slice(data.y());
    let beta = &s_inv * x.transpose() * &wm * &y;
    let hat = &x * &s_inv * x.transpose();
    let residuals = &x * &beta - y;
    DirectFit { s_inv, beta, hat, residuals }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Points on a circle of radius sqrt(2): every leverage equals 2/n exactly
/// up to rounding.
pub fn circle_dataset(n: usize, y: Vec<f64>) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            vec![2f64.sqrt() * t.cos(), 2f64.sqrt() * t.sin()]
        })
        .collect();
    Dataset::from_rows(&rows, y).unwrap()
}
