//! Greedy residual thresholding and stable residual filtering.
//!
//! [`residual_thresholding`] repeatedly zeroes the supported row with the
//! largest absolute residual (lowest index on ties) while that residual is
//! strictly above the threshold, refitting by rank-one downdate after each
//! removal.
//!
//! [`stable_residual_filtering`] runs the greedy pass independently at every
//! rung of the ladder `R_j = exp(108 k l0 j) * r0`, `j = 0..=2k`.
//! [`stable_residual_filtering_fast`] walks the ladder top-down once, carrying
//! removals forward, and stops as soon as `k` rows have been removed. The two
//! always agree on the score; they agree on the weights unless the fast path
//! stopped at a level above `k`, in which case the score is `k` and the
//! weights are irrelevant downstream.

use crate::error::{Error, Result};
use crate::linalg::{weighted_ols, Dataset, RegressionState, WeightVector};

/// Weights produced at one ladder level, relative to the starting weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelWeights {
    /// Rows zeroed, in removal order.
    pub removed: Vec<usize>,
    /// Set when the fast path gave up and replaced this level by `0^n`.
    pub cleared: bool,
}

impl LevelWeights {
    pub fn materialize(&self, base: &WeightVector) -> WeightVector {
        if self.cleared {
            return WeightVector::zeros(base.len());
        }
        let mut w = base.as_slice().to_vec();
        for &i in &self.removed {
            w[i] = 0.0;
        }
        WeightVector::new(w).expect("zeroing preserves [0, 1]")
    }

    fn same_weights(&self, other: &LevelWeights) -> bool {
        if self.cleared || other.cleared {
            return self.cleared == other.cleared;
        }
        let mut a = self.removed.clone();
        let mut b = other.removed.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

/// Output of stable residual filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFilterOutcome {
    pub score: f64,
    /// `v_i = w_i c_i / k` with `c_i` the number of upper levels retaining `i`.
    pub weights: WeightVector,
    pub base: WeightVector,
    pub levels: Vec<LevelWeights>,
    pub level_scores: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub k: usize,
    /// Level at which the fast path hit the removal budget.
    pub early_exit_level: Option<usize>,
}

impl ResidualFilterOutcome {
    /// `u^{(j)}`.
    pub fn level_weights(&self, j: usize) -> WeightVector {
        self.levels[j].materialize(&self.base)
    }

    pub fn level_contains(&self, j: usize, i: usize) -> bool {
        let level = &self.levels[j];
        !level.cleared && self.base.is_supported(i) && !level.removed.contains(&i)
    }

    /// `c_i = |{j in k+1..=2k : u_i^{(j)} != 0}|`.
    pub fn counts(&self) -> Vec<usize> {
        retention_counts(&self.base, &self.levels, self.k)
    }

    /// Functional equivalence of two runs on the same input: bit-identical
    /// scores and level scores, and identical weights unless a budget exit
    /// happened above level `k` (then only the score is meaningful). Levels
    /// at or below a budget exit are not compared.
    pub fn equivalent_to(&self, other: &ResidualFilterOutcome) -> bool {
        if self.score.to_bits() != other.score.to_bits() || self.k != other.k {
            return false;
        }
        let exit = self.early_exit_level.max(other.early_exit_level);
        if exit.is_some_and(|l| l > self.k) {
            return true;
        }
        let first_live = exit.map_or(0, |l| l + 1);
        self.weights == other.weights
            && self.levels[first_live..]
                .iter()
                .zip(&other.levels[first_live..])
                .all(|(a, b)| a.same_weights(b))
            && self
                .level_scores
                .iter()
                .zip(&other.level_scores)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// `R_j = exp(108 k l0 j) * r0` for `j = 0..=2k`.
pub fn residual_thresholds(l0: f64, r0: f64, k: usize) -> Vec<f64> {
    (0..=2 * k).map(|j| (108.0 * k as f64 * l0 * j as f64).exp() * r0).collect()
}

/// Supported index with the largest absolute residual; ties go to the lowest index.
fn largest_residual(state: &RegressionState) -> Option<(usize, f64)> {
    let w = state.weights();
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in state.residuals().iter().enumerate() {
        if !w.is_supported(i) {
            continue;
        }
        let a = e.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best
}

fn remove(data: &Dataset, state: &mut RegressionState, i: usize) -> Result<()> {
    state.remove_point(data, i).map_err(|e| match e {
        Error::DegenerateRemoval { weighted_leverage, .. } => Error::SingularCovariance {
            condition: 1.0 / (1.0 - weighted_leverage).max(f64::MIN_POSITIVE),
        },
        other => other,
    })
}

/// Greedy pass on an existing fit. Stops when the largest supported residual
/// is at most `r`, or once `*count` reaches `budget`. Removed indices are
/// appended to `removed`.
fn threshold_in_place(
    data: &Dataset,
    state: &mut RegressionState,
    r: f64,
    removed: &mut Vec<usize>,
    count: &mut usize,
    budget: usize,
) -> Result<()> {
    loop {
        let Some((i, e)) = largest_residual(state) else { return Ok(()) };
        if e <= r || *count >= budget {
            return Ok(());
        }
        remove(data, state, i)?;
        removed.push(i);
        *count += 1;
    }
}

/// Zeroes residual outliers above `r`, one at a time, starting from `w`.
pub fn residual_thresholding(data: &Dataset, r: f64, w: &WeightVector) -> Result<WeightVector> {
    let mut state = weighted_ols(data, w)?;
    let mut removed = Vec::new();
    threshold_in_place(data, &mut state, r, &mut removed, &mut 0, usize::MAX)?;
    Ok(state.weights().clone())
}

fn validate(data: &Dataset, w: &WeightVector, l0: f64, r0: f64, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("discretization k must be at least 1".into()));
    }
    if !(l0 > 0.0 && l0.is_finite()) {
        return Err(Error::InvalidParameter(format!("l0 must be positive, got {l0}")));
    }
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(Error::InvalidParameter(format!("r0 must be positive, got {r0}")));
    }
    if w.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), data.n())));
    }
    Ok(())
}

fn retention_counts(base: &WeightVector, levels: &[LevelWeights], k: usize) -> Vec<usize> {
    let n = base.len();
    let mut counts: Vec<usize> = (0..n).map(|i| if base.is_supported(i) { k } else { 0 }).collect();
    for level in &levels[k + 1..=2 * k] {
        if level.cleared {
            counts.iter_mut().for_each(|c| *c = c.saturating_sub(1));
        } else {
            for &i in &level.removed {
                counts[i] -= 1;
            }
        }
    }
    counts
}

fn assemble(
    data: &Dataset,
    base: WeightVector,
    levels: Vec<LevelWeights>,
    thresholds: Vec<f64>,
    k: usize,
    early_exit_level: Option<usize>,
) -> ResidualFilterOutcome {
    let n = data.n() as f64;
    let kf = k as f64;
    let base_l1 = base.l1();
    let level_scores: Vec<f64> = levels
        .iter()
        .enumerate()
        .map(|(j, level)| {
            if level.cleared {
                kf
            } else {
                let lost: f64 = level.removed.iter().map(|&i| base.get(i)).sum();
                kf.min(n - (base_l1 - lost) + j as f64)
            }
        })
        .collect();
    let score = level_scores[..=k].iter().copied().fold(f64::INFINITY, f64::min);
    let counts = retention_counts(&base, &levels, k);
    let v = base
        .as_slice()
        .iter()
        .zip(&counts)
        .map(|(&wi, &c)| wi * c as f64 / kf)
        .collect();
    ResidualFilterOutcome {
        score,
        weights: WeightVector::new(v).expect("averages of weights stay in [0, 1]"),
        base,
        levels,
        level_scores,
        thresholds,
        k,
        early_exit_level,
    }
}

/// Reference implementation: an independent greedy pass per ladder level.
pub fn stable_residual_filtering(
    data: &Dataset,
    w: &WeightVector,
    l0: f64,
    r0: f64,
    k: usize,
) -> Result<ResidualFilterOutcome> {
    validate(data, w, l0, r0, k)?;
    let thresholds = residual_thresholds(l0, r0, k);
    let mut levels = Vec::with_capacity(2 * k + 1);
    for &r in &thresholds {
        let mut state = weighted_ols(data, w)?;
        let mut removed = Vec::new();
        threshold_in_place(data, &mut state, r, &mut removed, &mut 0, usize::MAX)?;
        levels.push(LevelWeights { removed, cleared: false });
    }
    Ok(assemble(data, w.clone(), levels, thresholds, k, None))
}

/// Single top-down pass with a removal budget of `k`.
pub fn stable_residual_filtering_fast(
    data: &Dataset,
    w: &WeightVector,
    l0: f64,
    r0: f64,
    k: usize,
) -> Result<ResidualFilterOutcome> {
    validate(data, w, l0, r0, k)?;
    let state = weighted_ols(data, w)?;
    fast_from_state(data, state, l0, r0, k)
}

/// Fast path starting from an existing fit at the starting weights.
pub fn fast_from_state(
    data: &Dataset,
    mut state: RegressionState,
    l0: f64,
    r0: f64,
    k: usize,
) -> Result<ResidualFilterOutcome> {
    let base = state.weights().clone();
    validate(data, &base, l0, r0, k)?;
    let thresholds = residual_thresholds(l0, r0, k);
    let mut levels: Vec<Option<LevelWeights>> = vec![None; 2 * k + 1];
    let mut removed = Vec::new();
    let mut count = 0;
    let mut early_exit_level = None;

    for j in (0..=2 * k).rev() {
        threshold_in_place(data, &mut state, thresholds[j], &mut removed, &mut count, k)?;
        if count >= k {
            for level in &mut levels[..=j] {
                *level = Some(LevelWeights { removed: Vec::new(), cleared: true });
            }
            early_exit_level = Some(j);
            break;
        }
        levels[j] = Some(LevelWeights { removed: removed.clone(), cleared: false });
    }
    let levels = levels.into_iter().map(|l| l.expect("every level assigned")).collect();
    Ok(assemble(data, base, levels, thresholds, k, early_exit_level))
}
