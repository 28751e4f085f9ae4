use dpols_core::dp::{ptr_fail_probability, split_seed};
use dpols_core::{ptr_check, sample_shaped_gaussian, stable_histogram, Bin, PrivacyParams, PtrVerdict, RngStream};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn empirical_covariance(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples[0].len();
    let m = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / m;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / (m - 1.0))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

#[test]
fn gate_certain_zones() {
    let params = PrivacyParams::new(0.5, 0.05, 4.0).unwrap();
    let frontier = 4.0 * 20f64.ln() / 0.5 + 8.0;
    assert!((params.ptr_frontier() - frontier).abs() < 1e-12);
    assert!((frontier - 31.966).abs() < 1e-3);
    for seed in 0..10_000 {
        let mut rng = RngStream::new(seed);
        assert_eq!(ptr_check(0.0, &params, &mut rng), PtrVerdict::Pass);
        let mut rng = RngStream::new(seed);
        assert_eq!(ptr_check(frontier, &params, &mut rng), PtrVerdict::Fail);
        let mut rng = RngStream::new(seed);
        assert_eq!(ptr_check(32.0, &params, &mut rng), PtrVerdict::Fail);
    }
}

#[test]
fn gate_failure_rate_is_monotone_and_matches_closed_form() {
    let params = PrivacyParams::new(0.8, 0.01, 4.0).unwrap();
    let frontier = params.ptr_frontier();
    let trials = 4000;
    let mut previous = 0usize;
    for step in 0..=20 {
        let score = frontier * step as f64 / 20.0;
        let fails = (0..trials)
            .filter(|&t| ptr_check(score, &params, &mut RngStream::new(split_seed(5, t))) == PtrVerdict::Fail)
            .count();
        // paired seeds: a failure at a lower score persists at a higher one
        assert!(fails >= previous, "score {score}");
        previous = fails;
        let p = ptr_fail_probability(score, &params);
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((fails as f64 / trials as f64 - p).abs() <= 4.0 * se + 1e-12, "score {score}");
    }
    let mid = frontier / 2.0;
    let verdicts: Vec<_> = (0..200).map(|s| ptr_check(mid, &params, &mut RngStream::new(s))).collect();
    assert!(verdicts.contains(&PtrVerdict::Pass) && verdicts.contains(&PtrVerdict::Fail));
}

#[test]
fn shaped_gaussian_identity_covariance() {
    let mut rng = RngStream::new(3);
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let s = DMatrix::identity(2, 2);
    let samples: Vec<_> = (0..100_000).map(|_| sample_shaped_gaussian(&mean, &s, 1.0, &mut rng).unwrap()).collect();
    let (m, cov) = empirical_covariance(&samples);
    assert!((m - mean).amax() < 0.02);
    assert!(spectral_norm(&(cov - DMatrix::identity(2, 2))) < 0.05);
}

#[test]
fn shaped_gaussian_diagonal_shape() {
    let mut rng = RngStream::new(4);
    let mean = DVector::zeros(2);
    let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
    let samples: Vec<_> = (0..100_000).map(|_| sample_shaped_gaussian(&mean, &s, 1.0, &mut rng).unwrap()).collect();
    let (_, cov) = empirical_covariance(&samples);
    assert!((cov[(0, 0)] / 0.25 - 1.0).abs() < 0.05);
    assert!((cov[(1, 1)] - 1.0).abs() < 0.05);
}

#[test]
fn whitened_samples_are_chi_square() {
    let mut rng = RngStream::new(8);
    let d = 4;
    let a = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
    let s = &a * a.transpose() + DMatrix::identity(d, d);
    let root = {
        let e = SymmetricEigen::new(s.clone());
        &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt)) * e.eigenvectors.transpose()
    };
    let c2 = 2.5;
    let chi = ChiSquared::new(d as f64).unwrap();
    let bins = 20;
    let mut counts = vec![0usize; bins];
    let m = 50_000;
    for _ in 0..m {
        let b = sample_shaped_gaussian(&DVector::zeros(d), &s, c2, &mut rng).unwrap();
        let u = &root * b / c2.sqrt();
        let p = chi.cdf(u.norm_squared());
        counts[((p * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = m as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 1e-3, "chi-square {stat}, p = {p_value}");
}

#[test]
fn histogram_single_bin_accuracy() {
    let points = vec![0.5; 10_000];
    let bins = [Bin::half_open(0.0, 1.0), Bin::half_open(1.0, 2.0)];
    let good = (0..200)
        .filter(|&seed| {
            let p = stable_histogram(&points, &bins, 1.0, 1e-4, &mut RngStream::new(seed)).unwrap();
            assert_eq!(p[1], 0.0);
            (p[0] - 1.0).abs() <= 0.01
        })
        .count();
    assert!(good >= 198, "{good}");
}

#[test]
fn histogram_sample_complexity_contract() {
    let (eps, delta, alpha, beta) = (1.0, 1e-4, 0.05, 0.05);
    let n = ((8.0 / (eps * beta)) * (4.0f64 / (alpha * delta)).ln()).ceil() as usize;
    assert_eq!(n, 2175);
    let points: Vec<f64> = (0..n).map(|i| [0.2, 1.2, 1.7, 2.5][i % 4]).collect();
    let bins = [Bin::half_open(0.0, 1.0), Bin::half_open(1.0, 2.0), Bin::half_open(2.0, 3.0), Bin::point(7.0)];
    let truth = [0.25, 0.5, 0.25, 0.0];
    let within = (0..200)
        .filter(|&seed| {
            let p = stable_histogram(&points, &bins, eps, delta, &mut RngStream::new(seed)).unwrap();
            p.iter().zip(truth).all(|(a, b)| (a - b).abs() <= beta)
        })
        .count();
    assert!(within as f64 >= (1.0 - alpha) * 200.0, "{within}");
}
