//! Stable leverage filtering.
//!
//! Runs a geometric ladder of leverage thresholds `L_j = exp(j/k) * l0` for
//! `j = 2k, ..., 0`. At each level every retained row whose leverage under the
//! retained covariance exceeds `L_j` is dropped as a batch, repeating until no
//! offender remains. Removals accumulate as `j` decreases, so the retained
//! sets are nested: `A_0 ⊆ A_1 ⊆ ... ⊆ A_2k`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    dot, factor_spd, mat_vec, quad_form, Dataset, WeightVector, DEGENERATE_DENOMINATOR,
};

/// Result of [`stable_leverage_filtering`].
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageFilterOutcome {
    score: usize,
    weights: WeightVector,
    k: usize,
    removed_at: Vec<Option<usize>>,
    collapsed_at: Option<usize>,
}

impl LeverageFilterOutcome {
    /// `min{k, min_{0<=j<=k} (n - |A_j| + j)}`.
    pub fn score(&self) -> usize {
        self.score
    }

    /// `w_i = |{j in k+1..=2k : i in A_j}| / k`.
    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Level at which each row left the retained set, if it ever did.
    pub fn removed_at(&self) -> &[Option<usize>] {
        &self.removed_at
    }

    /// Level at which the retained covariance lost rank; every row still
    /// retained at that point is dropped there.
    pub fn collapsed_at(&self) -> Option<usize> {
        self.collapsed_at
    }

    /// Whether row `i` belongs to the retained set `A_j`.
    pub fn in_level_set(&self, j: usize, i: usize) -> bool {
        self.removed_at[i].is_none_or(|r| j > r)
    }

    /// The retained set `A_j`, ascending.
    pub fn level_set(&self, j: usize) -> Vec<usize> {
        (0..self.removed_at.len()).filter(|&i| self.in_level_set(j, i)).collect()
    }

    pub fn level_set_size(&self, j: usize) -> usize {
        (0..self.removed_at.len()).filter(|&i| self.in_level_set(j, i)).count()
    }
}

/// Leverage threshold at ladder level `j`.
pub fn leverage_threshold(l0: f64, k: usize, j: usize) -> f64 {
    (j as f64 / k as f64).exp() * l0
}

/// Inverse covariance of the retained rows plus their leverages.
struct Tracker {
    s_inv: DMatrix<f64>,
    lev: Vec<f64>,
}

impl Tracker {
    fn factor(data: &Dataset, retained: &[bool]) -> Result<Self> {
        let mask: Vec<f64> = retained.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
        let chol = factor_spd(&data.weighted_gram(&mask))?;
        let s_inv = chol.inverse();
        let lev = data
            .rows()
            .zip(retained)
            .map(|(row, &r)| if r { quad_form(&s_inv, row) } else { 0.0 })
            .collect();
        Ok(Self { s_inv, lev })
    }

    /// Unit-weight Sherman–Morrison removal of row `j`. Returns `false` when
    /// the update is numerically degenerate and a refactorization is needed.
    fn remove(&mut self, data: &Dataset, retained: &[bool], j: usize) -> bool {
        let xj = data.row(j);
        let g = mat_vec(&self.s_inv, xj);
        let q = 1.0 - dot(xj, &g);
        if q <= DEGENERATE_DENOMINATOR {
            return false;
        }
        let d = data.d();
        for b in 0..d {
            for a in 0..d {
                self.s_inv[(a, b)] += g[a] * g[b] / q;
            }
        }
        for (i, row) in data.rows().enumerate() {
            if retained[i] {
                let hij = dot(row, &g);
                self.lev[i] += hij * hij / q;
            }
        }
        true
    }
}

/// Stable leverage filtering over the covariates of `data` (responses are
/// ignored). Requires `k >= 1`, `l0 > 0` and `k * l0 <= 1`.
///
/// If the retained covariance becomes singular at some level (or fewer than
/// `d` rows remain), the retained set is emptied from that level down and the
/// level is reported through [`LeverageFilterOutcome::collapsed_at`].
pub fn stable_leverage_filtering(data: &Dataset, l0: f64, k: usize) -> Result<LeverageFilterOutcome> {
    if k == 0 {
        return Err(Error::InvalidParameter("discretization k must be at least 1".into()));
    }
    if !(l0 > 0.0 && l0.is_finite()) {
        return Err(Error::InvalidParameter(format!("leverage threshold must be positive, got {l0}")));
    }
    if k as f64 * l0 > 1.0 {
        return Err(Error::InvalidParameter(format!("need k * l0 <= 1, got {}", k as f64 * l0)));
    }

    let n = data.n();
    let d = data.d();
    let mut retained = vec![true; n];
    let mut live = n;
    let mut removed_at: Vec<Option<usize>> = vec![None; n];
    let mut collapsed_at = None;
    let mut tracker = Tracker::factor(data, &retained).ok();

    if tracker.is_none() {
        collapsed_at = Some(2 * k);
        removed_at.iter_mut().for_each(|r| *r = Some(2 * k));
    }

    'levels: for j in (0..=2 * k).rev() {
        let Some(t) = tracker.as_mut() else { break };
        let threshold = leverage_threshold(l0, k, j);
        loop {
            let out: Vec<usize> = (0..n).filter(|&i| retained[i] && t.lev[i] > threshold).collect();
            if out.is_empty() {
                break;
            }
            for &i in &out {
                retained[i] = false;
                removed_at[i] = Some(j);
            }
            live -= out.len();

            let refreshed = live > d
                && if out.len() < d {
                    // small batch: sequential rank-one downdates
                    let mut ok = true;
                    for &i in &out {
                        if !t.remove(data, &retained, i) {
                            ok = false;
                            break;
                        }
                    }
                    ok || refactor(data, &retained, t)
                } else {
                    refactor(data, &retained, t)
                };

            if !refreshed {
                for i in 0..n {
                    if retained[i] {
                        retained[i] = false;
                        removed_at[i] = Some(j);
                    }
                }
                collapsed_at = Some(j);
                break 'levels;
            }
        }
    }

    let outcome_weights = (0..n)
        .map(|i| survivals_in_upper_half(removed_at[i], k) as f64 / k as f64)
        .collect();
    let mut outcome = LeverageFilterOutcome {
        score: 0,
        weights: WeightVector::new(outcome_weights)?,
        k,
        removed_at,
        collapsed_at,
    };
    outcome.score = (0..=k)
        .map(|j| n - outcome.level_set_size(j) + j)
        .min()
        .unwrap_or(k)
        .min(k);
    Ok(outcome)
}

fn refactor(data: &Dataset, retained: &[bool], t: &mut Tracker) -> bool {
    match Tracker::factor(data, retained) {
        Ok(fresh) => {
            *t = fresh;
            true
        }
        Err(_) => false,
    }
}

/// Number of levels `j in k+1..=2k` with `j > removed_at`.
fn survivals_in_upper_half(removed_at: Option<usize>, k: usize) -> usize {
    match removed_at {
        None => k,
        Some(r) if r >= 2 * k => 0,
        Some(r) if r <= k => k,
        Some(r) => 2 * k - r,
    }
}
