//! Differential-privacy primitives: the propose-test-release gate, shaped
//! Gaussian release, Laplace noise and a stability-based histogram.
//!
//! Randomness comes from [`RngStream`], a ChaCha20 stream. Gaussian variates
//! use the ziggurat sampler of `rand_distr::StandardNormal`; Laplace and
//! truncated-Laplace variates use the inverse CDF of a single uniform draw.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Deterministic random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha20Rng,
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `child_seed = splitmix64(parent_seed ^ splitmix64(index))`.
pub fn split_seed(parent_seed: u64, index: u64) -> u64 {
    splitmix64(parent_seed ^ splitmix64(index))
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for trial `index`, derived from this stream's seed.
    pub fn child(&self, index: u64) -> Self {
        Self::new(split_seed(self.seed, index))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Laplace variate with the given scale; exactly zero when `scale == 0`.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.uniform() - 0.5;
        if scale == 0.0 {
            return 0.0;
        }
        // 1 - 2|u| lies in (0, 1]
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// `(epsilon, delta)` together with the sensitivity of the gated score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
}

impl PrivacyParams {
    /// Requires `0 < epsilon <= 1`, `0 < delta <= epsilon / 10`, `sensitivity > 0`.
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be in (0, 1], got {epsilon}")));
        }
        if !(delta > 0.0 && delta <= epsilon / 10.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in (0, epsilon/10], got {delta}"
            )));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sensitivity must be positive, got {sensitivity}"
            )));
        }
        Ok(Self { epsilon, delta, sensitivity })
    }

    /// Noise scale `Delta / epsilon` of the gate.
    fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }

    /// Truncation point `B = Delta ln(1/delta) / epsilon + Delta`.
    pub fn ptr_bound(&self) -> f64 {
        self.scale() * (1.0 / self.delta).ln() + self.sensitivity
    }

    /// Scores at or above `Delta ln(1/delta) / epsilon + 2 Delta` always fail.
    pub fn ptr_frontier(&self) -> f64 {
        self.ptr_bound() + self.sensitivity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtrVerdict {
    Pass,
    Fail,
}

/// Propose-test-release gate.
///
/// Draws `Z` from the Laplace density `∝ exp(-epsilon t / Delta)` truncated
/// to `[0, B]` and fails iff `score + Z > B`. A score of zero always passes
/// and any score above `B` always fails.
pub fn ptr_check(score: f64, params: &PrivacyParams, rng: &mut RngStream) -> PtrVerdict {
    let bound = params.ptr_bound();
    let z = truncated_exponential(params.scale(), bound, rng.uniform());
    if score + z > bound {
        PtrVerdict::Fail
    } else {
        PtrVerdict::Pass
    }
}

/// Probability that [`ptr_check`] fails at `score`.
pub fn ptr_fail_probability(score: f64, params: &PrivacyParams) -> f64 {
    let bound = params.ptr_bound();
    let b = params.scale();
    let cut = bound - score;
    if cut >= bound {
        0.0
    } else if cut < 0.0 {
        1.0
    } else {
        let mass = -(-bound / b).exp_m1();
        ((-cut / b).exp() - (-bound / b).exp()) / mass
    }
}

// Inverse CDF of the exponential with scale `b` truncated to `[0, bound]`.
fn truncated_exponential(b: f64, bound: f64, u: f64) -> f64 {
    let mass = -(-bound / b).exp_m1();
    (-b * (-u * mass).ln_1p()).min(bound)
}

/// Draws from `N(mean, c2 * S^{-1})`: factor `S = L L^T`, solve `L^T w = u`
/// for standard normal `u`, return `mean + sqrt(c2) w`.
pub fn sample_shaped_gaussian(
    mean: &DVector<f64>,
    s: &DMatrix<f64>,
    c2: f64,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if s.nrows() != mean.len() || !s.is_square() {
        return Err(Error::DimensionMismatch("shape matrix must be d x d".into()));
    }
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::InvalidParameter(format!("variance scale must be positive and finite, got {c2}")));
    }
    let chol = Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite)?;
    let u = DVector::from_fn(mean.len(), |_, _| rng.standard_normal());
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(mean + w * c2.sqrt())
}

/// A histogram bin `[lo, hi)`, or `[lo, hi]` when `closed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl Bin {
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, closed: false }
    }

    pub fn point(at: f64) -> Self {
        Self { lo: at, hi: at, closed: true }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && (x < self.hi || (self.closed && x == self.hi))
    }
}

/// Stability-based histogram over disjoint `bins`.
///
/// Each non-empty bin's empirical proportion gets Laplace noise of scale
/// `2 / (eps0 n)` and is zeroed when it falls below
/// `2 ln(2 / delta0) / (eps0 n) + 1/n`. Empty bins report exactly zero.
/// `eps0 = inf` disables the noise.
pub fn stable_histogram(
    points: &[f64],
    bins: &[Bin],
    eps0: f64,
    delta0: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(eps0 > 0.0) {
        return Err(Error::InvalidParameter(format!("eps0 must be positive, got {eps0}")));
    }
    let n = points.len();
    if n == 0 {
        return Ok(vec![0.0; bins.len()]);
    }
    let nf = n as f64;
    if !(delta0 > 0.0 && delta0 <= 1.0 / nf) {
        return Err(Error::InvalidParameter(format!("delta0 must be in (0, 1/n], got {delta0}")));
    }
    let mut counts = vec![0usize; bins.len()];
    for &p in points {
        if let Some(b) = bins.iter().position(|bin| bin.contains(p)) {
            counts[b] += 1;
        }
    }
    let scale = 2.0 / (eps0 * nf);
    let threshold = 2.0 * (2.0 / delta0).ln() / (eps0 * nf) + 1.0 / nf;
    Ok(counts
        .into_iter()
        .map(|c| {
            if c == 0 {
                return 0.0;
            }
            let noisy = c as f64 / nf + rng.laplace(scale);
            if noisy < threshold {
                0.0
            } else {
                noisy
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(9);
        let mut b = RngStream::new(9);
        for _ in 0..32 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
        assert_ne!(RngStream::new(9).child(0).uniform(), RngStream::new(9).child(1).uniform());
        assert_eq!(RngStream::new(9).child(4).seed(), split_seed(9, 4));
    }

    #[test]
    fn privacy_params_validation() {
        assert!(PrivacyParams::new(0.0, 0.01, 1.0).is_err());
        assert!(PrivacyParams::new(1.5, 0.01, 1.0).is_err());
        assert!(PrivacyParams::new(0.5, 0.06, 1.0).is_err());
        assert!(PrivacyParams::new(0.5, 0.05, 0.0).is_err());
        assert!(PrivacyParams::new(0.5, 0.05, 4.0).is_ok());
    }

    #[test]
    fn frontier_matches_formula() {
        let p = PrivacyParams::new(0.5, 0.05, 4.0).unwrap();
        let expected = 4.0 * 20f64.ln() / 0.5 + 8.0;
        assert!((p.ptr_frontier() - expected).abs() < 1e-12);
        assert!((expected - 31.966).abs() < 1e-3);
    }

    #[test]
    fn ptr_zones() {
        let p = PrivacyParams::new(0.5, 0.05, 4.0).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..2000 {
            assert_eq!(ptr_check(0.0, &p, &mut rng), PtrVerdict::Pass);
            assert_eq!(ptr_check(32.0, &p, &mut rng), PtrVerdict::Fail);
        }
        assert_eq!(ptr_fail_probability(0.0, &p), 0.0);
        assert_eq!(ptr_fail_probability(32.0, &p), 1.0);
        let mid = ptr_fail_probability(16.0, &p);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn ptr_intermediate_is_random() {
        let p = PrivacyParams::new(0.5, 0.05, 4.0).unwrap();
        let half = p.ptr_frontier() / 2.0;
        let verdicts: Vec<_> =
            (0..400).map(|s| ptr_check(half, &p, &mut RngStream::new(s))).collect();
        assert!(verdicts.contains(&PtrVerdict::Pass));
        assert!(verdicts.contains(&PtrVerdict::Fail));
    }

    #[test]
    fn laplace_zero_scale_is_zero() {
        let mut rng = RngStream::new(3);
        assert!((0..100).all(|_| rng.laplace(0.0) == 0.0));
    }

    #[test]
    fn degenerate_noise_returns_mean() {
        let mean = DVector::from_vec(vec![1.5, -2.0, 3.25]);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
        let out = sample_shaped_gaussian(&mean, &s, 1e-300, &mut RngStream::new(0)).unwrap();
        for i in 0..3 {
            assert!((out[i] - mean[i]).abs() <= f64::EPSILON * mean[i].abs());
        }
    }

    #[test]
    fn shaped_gaussian_rejects_bad_inputs() {
        let mean = DVector::zeros(2);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let mut rng = RngStream::new(0);
        assert_eq!(
            sample_shaped_gaussian(&mean, &bad, 1.0, &mut rng),
            Err(Error::NotPositiveDefinite)
        );
        assert!(sample_shaped_gaussian(&mean, &DMatrix::identity(2, 2), 0.0, &mut rng).is_err());
    }

    #[test]
    fn histogram_empty_input_is_all_zero() {
        let bins = [Bin::half_open(0.0, 1.0), Bin::half_open(1.0, 2.0)];
        let out = stable_histogram(&[], &bins, 1.0, 0.5, &mut RngStream::new(0)).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn histogram_empty_bins_stay_zero() {
        let bins = [Bin::point(0.0), Bin::half_open(0.5, 1.0), Bin::half_open(1.0, 2.0)];
        let pts = vec![1.5; 500];
        for seed in 0..50 {
            let out = stable_histogram(&pts, &bins, 1.0, 1e-4, &mut RngStream::new(seed)).unwrap();
            assert_eq!(out[0], 0.0);
            assert_eq!(out[1], 0.0);
            assert!(out[2] > 0.5);
        }
    }

    #[test]
    fn histogram_validates_delta() {
        let bins = [Bin::half_open(0.0, 1.0)];
        assert!(stable_histogram(&[0.5; 10], &bins, 1.0, 0.2, &mut RngStream::new(0)).is_err());
        assert!(stable_histogram(&[0.5; 10], &bins, 0.0, 0.01, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn bins_membership() {
        assert!(Bin::point(0.0).contains(0.0));
        assert!(!Bin::point(0.0).contains(1e-300));
        assert!(Bin::half_open(1.0, 2.0).contains(1.0));
        assert!(!Bin::half_open(1.0, 2.0).contains(2.0));
    }
}
