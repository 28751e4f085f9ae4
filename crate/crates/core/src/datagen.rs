//! Synthetic linear-model data and adjacent-pair construction.

use nalgebra::{DMatrix, DVector};

use crate::dp::RngStream;
use crate::error::{Error, Result};
use crate::linalg::Dataset;

/// Rejection radius (in whitened units, scaled by `sqrt(d)`) of the bounded family.
pub const BOUNDED_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateFamily {
    Gaussian,
    /// Gaussian rows conditioned on `|Sigma^{-1/2} x| <= 4 sqrt(d)`, with label
    /// noise conditioned on `|z| <= 4 sigma`.
    BoundedSubgaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub beta_star: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub family: CovariateFamily,
    pub seed: u64,
}

impl ModelSpec {
    /// Identity covariance, `beta_star = (1, ..., 1)`.
    pub fn isotropic(n: usize, d: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            d,
            sigma,
            beta_star: DVector::from_element(d, 1.0),
            covariance: DMatrix::identity(d, d),
            family: CovariateFamily::Gaussian,
            seed,
        }
    }

    /// `Sigma = diag(kappa, 1, ..., 1)`.
    pub fn with_condition_number(mut self, kappa: f64) -> Self {
        let mut cov = DMatrix::identity(self.d, self.d);
        cov[(0, 0)] = kappa;
        self.covariance = cov;
        self
    }

    pub fn with_family(mut self, family: CovariateFamily) -> Self {
        self.family = family;
        self
    }

    fn sampler(&self) -> Result<Sampler> {
        if self.d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if self.beta_star.len() != self.d || self.covariance.shape() != (self.d, self.d) {
            return Err(Error::DimensionMismatch(format!(
                "beta_star has {} entries and covariance is {:?} for d = {}",
                self.beta_star.len(),
                self.covariance.shape(),
                self.d
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        let sym = (&self.covariance - self.covariance.transpose()).abs().max();
        if sym > 1e-12 * self.covariance.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = self.covariance.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(Sampler {
            l: chol.l(),
            beta: self.beta_star.clone(),
            sigma: self.sigma,
            family: self.family,
        })
    }
}

struct Sampler {
    l: DMatrix<f64>,
    beta: DVector<f64>,
    sigma: f64,
    family: CovariateFamily,
}

impl Sampler {
    fn covariate(&self, rng: &mut RngStream, out: &mut [f64]) {
        let d = out.len();
        let limit = BOUNDED_RADIUS * BOUNDED_RADIUS * d as f64;
        let z = loop {
            let z = DVector::from_fn(d, |_, _| rng.standard_normal());
            if self.family == CovariateFamily::Gaussian || z.norm_squared() <= limit {
                break z;
            }
        };
        let x = &self.l * z;
        out.copy_from_slice(x.as_slice());
    }

    fn noise(&self, rng: &mut RngStream) -> f64 {
        loop {
            let z = rng.standard_normal();
            if self.family == CovariateFamily::Gaussian || z.abs() <= BOUNDED_RADIUS {
                return z * self.sigma;
            }
        }
    }

    fn label(&self, x: &[f64], rng: &mut RngStream) -> f64 {
        let mean: f64 = x.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum();
        mean + self.noise(rng)
    }
}

/// Draws `n` rows from the model; deterministic in `spec.seed`.
pub fn generate(spec: &ModelSpec) -> Result<Dataset> {
    let sampler = spec.sampler()?;
    let mut rng = RngStream::new(spec.seed);
    let d = spec.d;
    let mut x = vec![0.0; spec.n * d];
    let mut y = Vec::with_capacity(spec.n);
    for row in x.chunks_exact_mut(d) {
        sampler.covariate(&mut rng, row);
        y.push(sampler.label(row, &mut rng));
    }
    Dataset::new(x, y, d)
}

/// Keeps the covariates of `design` and redraws the labels from the model.
pub fn redraw_labels(design: &Dataset, spec: &ModelSpec, rng: &mut RngStream) -> Result<Dataset> {
    if design.d() != spec.d {
        return Err(Error::DimensionMismatch(format!("design has d = {}, model d = {}", design.d(), spec.d)));
    }
    let sampler = spec.sampler()?;
    let y = design.rows().map(|row| sampler.label(row, rng)).collect();
    design.with_responses(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdjacentMode {
    /// A fresh in-model row.
    Resample,
    /// Covariates scaled by `1 + magnitude`, label kept.
    LeverageOutlier,
    /// Label shifted by `magnitude * sigma`, covariates kept.
    ResidualOutlier,
}

impl AdjacentMode {
    pub const ALL: [AdjacentMode; 3] =
        [AdjacentMode::Resample, AdjacentMode::LeverageOutlier, AdjacentMode::ResidualOutlier];

    pub fn name(self) -> &'static str {
        match self {
            AdjacentMode::Resample => "resample",
            AdjacentMode::LeverageOutlier => "leverage-outlier",
            AdjacentMode::ResidualOutlier => "residual-outlier",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacentPair {
    pub base: Dataset,
    pub variant: Dataset,
    pub i_star: usize,
}

/// Replaces row `i_star` of `data` according to `mode`.
pub fn make_adjacent(
    data: &Dataset,
    spec: &ModelSpec,
    i_star: usize,
    mode: AdjacentMode,
    magnitude: f64,
    rng: &mut RngStream,
) -> Result<AdjacentPair> {
    if i_star >= data.n() {
        return Err(Error::InvalidInput(format!("index {i_star} out of range for n = {}", data.n())));
    }
    let old = data.row(i_star);
    let old_y = data.y()[i_star];
    let (row, y) = match mode {
        AdjacentMode::Resample => {
            let sampler = spec.sampler()?;
            let mut row = vec![0.0; data.d()];
            sampler.covariate(rng, &mut row);
            let y = sampler.label(&row, rng);
            (row, y)
        }
        AdjacentMode::LeverageOutlier => (old.iter().map(|v| v * (1.0 + magnitude)).collect(), old_y),
        AdjacentMode::ResidualOutlier => (old.to_vec(), old_y + magnitude * spec.sigma),
    };
    Ok(AdjacentPair {
        base: data.clone(),
        variant: data.with_row(i_star, &row, y)?,
        i_star,
    })
}
