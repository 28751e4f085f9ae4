//! Private estimation of the label-noise variance.
//!
//! The rows are cut into `k'` consecutive blocks; each block contributes the
//! mean squared residual of its own least-squares fit, and a stable histogram
//! over bins `[2^{m/4}, 2^{(m+1)/4})` (plus the point bin `[0, 0]`) releases
//! the left edge of the heaviest bin.

use crate::dp::{stable_histogram, Bin, RngStream};
use crate::error::{Error, Result};
use crate::linalg::{weighted_ols, Dataset, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaConfig {
    pub eps0: f64,
    pub delta0: f64,
    pub zeta: f64,
    pub c1: f64,
}

impl SigmaConfig {
    pub fn new(eps0: f64, delta0: f64, zeta: f64) -> Self {
        Self { eps0, delta0, zeta, c1: 8.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) {
            return Err(Error::InvalidParameter(format!("eps0 must be positive, got {}", self.eps0)));
        }
        for (name, v) in [("delta0", self.delta0), ("zeta", self.zeta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParameter(format!("c1 must be positive, got {}", self.c1)));
        }
        Ok(())
    }

    /// `k' = floor(c1 ln(1/(delta0 zeta)) / eps0)`.
    pub fn block_count(&self) -> usize {
        let k = self.c1 * (1.0 / (self.delta0 * self.zeta)).ln() / self.eps0;
        if k.is_finite() {
            k.floor() as usize
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaOutcome {
    /// `bin_index` is `None` for the point bin at zero.
    Estimate { left_edge: f64, bin_index: Option<i64> },
    Bottom,
}

impl SigmaOutcome {
    pub fn left_edge(&self) -> Option<f64> {
        match self {
            SigmaOutcome::Estimate { left_edge, .. } => Some(*left_edge),
            SigmaOutcome::Bottom => None,
        }
    }
}

/// Left edge of geometric bin `m`.
pub fn bin_left_edge(m: i64) -> f64 {
    (m as f64 / 4.0).exp2()
}

/// Index of the geometric bin holding a positive `x`.
pub fn bin_index(x: f64) -> i64 {
    debug_assert!(x > 0.0);
    let mut m = (4.0 * x.log2()).floor() as i64;
    // guard against log2 rounding at bin edges
    while bin_left_edge(m) > x {
        m -= 1;
    }
    while bin_left_edge(m + 1) <= x {
        m += 1;
    }
    m
}

/// Mean squared residual of the unweighted fit on each block.
pub fn block_statistics(data: &Dataset, blocks: usize) -> Result<Vec<f64>> {
    if blocks == 0 {
        return Err(Error::InvalidParameter("need at least one block".into()));
    }
    let b = data.n() / blocks;
    if b <= data.d() {
        return Err(Error::BlockTooSmall { block_size: b, d: data.d() });
    }
    (0..blocks)
        .map(|j| {
            let block = data.slice(j * b, (j + 1) * b)?;
            let fit = weighted_ols(&block, &WeightVector::ones(b))?;
            Ok(fit.residuals().iter().map(|e| e * e).sum::<f64>() / b as f64)
        })
        .collect()
}

pub fn estimate_sigma_squared(data: &Dataset, cfg: &SigmaConfig, rng: &mut RngStream) -> Result<SigmaOutcome> {
    cfg.validate()?;
    let blocks = cfg.block_count();
    if blocks == 0 {
        return Err(Error::InvalidParameter("block count k' is zero".into()));
    }
    let psi = block_statistics(data, blocks)?;
    histogram_mode(&psi, cfg.eps0, cfg.delta0, rng)
}

/// Left edge of the heaviest noisy bin over the block statistics `psi`.
pub fn histogram_mode(psi: &[f64], eps0: f64, delta0: f64, rng: &mut RngStream) -> Result<SigmaOutcome> {
    let mut indices: Vec<i64> = psi.iter().filter(|&&p| p > 0.0).map(|&p| bin_index(p)).collect();
    indices.sort_unstable();
    indices.dedup();
    let has_zero = psi.contains(&0.0);

    // ascending by edge, so the first maximum is the smallest edge
    let mut bins = Vec::with_capacity(indices.len() + 1);
    let mut labels = Vec::with_capacity(indices.len() + 1);
    if has_zero {
        bins.push(Bin::point(0.0));
        labels.push(None);
    }
    for &m in &indices {
        bins.push(Bin::half_open(bin_left_edge(m), bin_left_edge(m + 1)));
        labels.push(Some(m));
    }

    let noisy = stable_histogram(psi, &bins, eps0, delta0, rng)?;
    let mut best: Option<usize> = None;
    for (i, &p) in noisy.iter().enumerate() {
        if p > 0.0 && best.is_none_or(|b| p > noisy[b]) {
            best = Some(i);
        }
    }
    Ok(match best {
        None => SigmaOutcome::Bottom,
        Some(i) => SigmaOutcome::Estimate {
            left_edge: bins[i].lo,
            bin_index: labels[i],
        },
    })
}
