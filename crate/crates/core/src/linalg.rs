//! Weighted least-squares primitives.
//!
//! Everything here works on a [`Dataset`] (row-major covariates plus
//! responses) and a [`WeightVector`]. A [`RegressionState`] bundles the
//! weighted fit together with the inverse weighted covariance, leverages and
//! residuals so that single-point reweighting can be applied in `O(nd + d^2)`
//! with Sherman–Morrison instead of refitting.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Systems whose condition estimate exceeds this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// A reweighting whose Sherman–Morrison denominator falls below this is
/// rejected as degenerate.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-10;

/// Covariates `x` (n × d, row-major) and responses `y` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major covariate buffer of length `n * d`.
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("d must be at least 1".into()));
        }
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset must have at least one row".into()));
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "covariate buffer has {} entries, expected {n} x {d}",
                x.len()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite covariate at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite response at row {pos}")));
        }
        Ok(Self { x, y, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate rows but {} responses",
                rows.len(),
                y.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has {} columns, expected {d}",
                rows[i].len()
            )));
        }
        Self::new(rows.concat(), y, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.d)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major covariate buffer.
    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.x)
    }

    /// Copy of the dataset with row `i` replaced.
    pub fn with_row(&self, i: usize, row: &[f64], y: f64) -> Result<Self> {
        if i >= self.n {
            return Err(Error::InvalidInput(format!("row {i} out of range for n = {}", self.n)));
        }
        if row.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "replacement row has {} columns, expected {}",
                row.len(),
                self.d
            )));
        }
        let mut x = self.x.clone();
        x[i * self.d..(i + 1) * self.d].copy_from_slice(row);
        let mut ys = self.y.clone();
        ys[i] = y;
        Self::new(x, ys, self.d)
    }

    /// Same covariates, new responses.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "{} responses for {} rows",
                y.len(),
                self.n
            )));
        }
        Self::new(self.x.clone(), y, self.d)
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return Err(Error::InvalidInput(format!("bad row range {start}..{end}")));
        }
        Self::new(
            self.x[start * self.d..end * self.d].to_vec(),
            self.y[start..end].to_vec(),
            self.d,
        )
    }

    /// `X^T diag(w) X`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut g = DMatrix::zeros(d, d);
        for (row, &wi) in self.rows().zip(w) {
            if wi == 0.0 {
                continue;
            }
            for a in 0..d {
                let wa = wi * row[a];
                for b in 0..=a {
                    g[(a, b)] += wa * row[b];
                }
            }
        }
        symmetrize_lower(&mut g);
        g
    }

    /// `X^T diag(w) y`.
    pub fn weighted_moment(&self, w: &[f64]) -> DVector<f64> {
        let mut m = DVector::zeros(self.d);
        for ((row, &wi), &yi) in self.rows().zip(w).zip(&self.y) {
            if wi == 0.0 {
                continue;
            }
            for (a, &xa) in row.iter().enumerate() {
                m[a] += wi * yi * xa;
            }
        }
        m
    }
}

fn symmetrize_lower(g: &mut DMatrix<f64>) {
    let d = g.nrows();
    for a in 0..d {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for a in 0..d {
        for b in 0..a {
            let avg = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = avg;
            m[(b, a)] = avg;
        }
    }
}

/// Per-observation weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!("weight {i} = {} is outside [0, 1]", w[i])));
        }
        Ok(Self(w))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    #[inline]
    pub fn is_supported(&self, i: usize) -> bool {
        self.0[i] != 0.0
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] != 0.0).collect()
    }

    pub fn support_len(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }

    /// Sum of weights, accumulated in index order.
    pub fn l1(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn l1_distance(&self, other: &WeightVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn set(&mut self, i: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!("weight {value} is outside [0, 1]")));
        }
        self.0[i] = value;
        Ok(())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// SPD factorization with the condition-number guard applied.
pub(crate) fn factor_spd(s: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularCovariance { condition });
    }
    Cholesky::new(s.clone()).ok_or(Error::SingularCovariance { condition })
}

/// `x^T m x` for a symmetric d × d matrix stored column-major.
#[inline]
pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let data = m.as_slice();
    let mut acc = 0.0;
    for b in 0..d {
        let col = &data[b * d..(b + 1) * d];
        let mut t = 0.0;
        for a in 0..d {
            t += col[a] * x[a];
        }
        acc += t * x[b];
    }
    acc
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[inline]
pub(crate) fn mat_vec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let data = m.as_slice();
    let mut out = vec![0.0; d];
    for (b, &xb) in x.iter().enumerate() {
        let col = &data[b * d..(b + 1) * d];
        for a in 0..d {
            out[a] += col[a] * xb;
        }
    }
    out
}

/// Weighted OLS fit kept consistent under single-point reweighting.
///
/// Leverages are `h_i = x_i^T (X^T W X)^{-1} x_i` and residuals are
/// `e_i = x_i^T beta - y_i` (fitted minus observed), populated for every row
/// including those with zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionState {
    gram: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    beta: DVector<f64>,
    leverages: Vec<f64>,
    residuals: Vec<f64>,
    weights: WeightVector,
}

impl RegressionState {
    /// `X^T W X`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(X^T W X)^{-1}`.
    pub fn s_inv(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn leverages(&self) -> &[f64] {
        &self.leverages
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    /// Cross-leverage `H_ij = x_i^T (X^T W X)^{-1} x_j`.
    pub fn cross_leverage(&self, data: &Dataset, i: usize, j: usize) -> f64 {
        dot(data.row(i), &mat_vec(&self.s_inv, data.row(j)))
    }

    /// Changes the weight of row `j` to `new_weight` with a rank-one update.
    ///
    /// With `delta = w_j - new_weight`, `g = S^{-1} x_j` and
    /// `q = 1 - delta * h_j`:
    /// `S^{-1} += (delta / q) g g^T`, `beta += (delta e_j / q) g`,
    /// `h_i += (delta / q) H_ij^2` and `e_i += (delta e_j / q) H_ij`.
    pub fn reweight(&mut self, data: &Dataset, j: usize, new_weight: f64) -> Result<()> {
        if j >= self.weights.len() {
            return Err(Error::InvalidInput(format!("index {j} out of range")));
        }
        if !(0.0..=1.0).contains(&new_weight) {
            return Err(Error::InvalidInput(format!("weight {new_weight} is outside [0, 1]")));
        }
        let delta = self.weights.get(j) - new_weight;
        if delta == 0.0 {
            return Ok(());
        }
        let xj = data.row(j);
        let g = mat_vec(&self.s_inv, xj);
        let hj = self.leverages[j];
        let q = 1.0 - delta * hj;
        if q <= DEGENERATE_DENOMINATOR {
            return Err(Error::DegenerateRemoval { index: j, weighted_leverage: delta * hj });
        }
        let scale = delta / q;
        let ej = self.residuals[j];
        let shift = scale * ej;

        let d = data.d();
        for b in 0..d {
            for a in 0..d {
                self.s_inv[(a, b)] += scale * g[a] * g[b];
                self.gram[(a, b)] -= delta * xj[a] * xj[b];
            }
        }
        for a in 0..d {
            self.beta[a] += shift * g[a];
        }
        for (i, row) in data.rows().enumerate() {
            let hij = dot(row, &g);
            self.leverages[i] += scale * hij * hij;
            self.residuals[i] += shift * hij;
        }
        self.weights.0[j] = new_weight;
        Ok(())
    }

    /// In-place removal of supported row `j`.
    pub fn remove_point(&mut self, data: &Dataset, j: usize) -> Result<()> {
        if j >= self.weights.len() || !self.weights.is_supported(j) {
            return Err(Error::InvalidInput(format!("index {j} is not in the support")));
        }
        self.reweight(data, j, 0.0)
    }
}

/// Weighted OLS: `beta = (X^T W X)^{-1} X^T W y` plus leverages and residuals.
pub fn weighted_ols(data: &Dataset, w: &WeightVector) -> Result<RegressionState> {
    if w.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.len(),
            data.n()
        )));
    }
    if w.l1() <= 0.0 {
        return Err(Error::EmptyWeights);
    }
    let gram = data.weighted_gram(w.as_slice());
    let chol = factor_spd(&gram)?;
    let mut s_inv = chol.inverse();
    symmetrize(&mut s_inv);
    let beta = chol.solve(&data.weighted_moment(w.as_slice()));

    let mut leverages = Vec::with_capacity(data.n());
    let mut residuals = Vec::with_capacity(data.n());
    for (row, &yi) in data.rows().zip(data.y()) {
        leverages.push(quad_form(&s_inv, row));
        residuals.push(dot(row, beta.as_slice()) - yi);
    }
    Ok(RegressionState { gram, s_inv, beta, leverages, residuals, weights: w.clone() })
}

/// Functional removal of row `j`; equals refitting with `w_j = 0`.
pub fn downdate_remove_point(
    data: &Dataset,
    state: &RegressionState,
    j: usize,
) -> Result<RegressionState> {
    let mut next = state.clone();
    next.remove_point(data, j)?;
    Ok(next)
}

/// Positive-definite divergence: the larger of
/// `||S1^{-1/2} S2 S1^{-1/2} - I||_tr` and the same with the roles swapped.
pub fn psd_distance(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if s1.shape() != s2.shape() || !s1.is_square() {
        return Err(Error::DimensionMismatch("psd_distance needs equal square matrices".into()));
    }
    let c1 = Cholesky::new(s1.clone()).ok_or(Error::NotPositiveDefinite)?;
    let c2 = Cholesky::new(s2.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(whitened_trace_gap(&c1, s2).max(whitened_trace_gap(&c2, s1)))
}

// ||L^{-1} S L^{-T} - I||_tr; same spectrum as the symmetric square-root form.
fn whitened_trace_gap(c: &Cholesky<f64, Dyn>, s: &DMatrix<f64>) -> f64 {
    let l = c.l();
    let a = l.solve_lower_triangular(s).expect("Cholesky factor is nonsingular");
    let mut m = l.solve_lower_triangular(&a.transpose()).expect("Cholesky factor is nonsingular");
    symmetrize(&mut m);
    SymmetricEigen::new(m).eigenvalues.iter().map(|ev| (ev - 1.0).abs()).sum()
}

/// Leverage bound `L` and residual bound `R` (`R = inf` checks leverage only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodnessParams {
    pub leverage_bound: f64,
    pub residual_bound: f64,
}

impl GoodnessParams {
    pub fn new(leverage_bound: f64, residual_bound: f64) -> Result<Self> {
        if !(leverage_bound > 0.0 && leverage_bound <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "leverage bound must be in (0, 1], got {leverage_bound}"
            )));
        }
        if !(residual_bound > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "residual bound must be positive, got {residual_bound}"
            )));
        }
        Ok(Self { leverage_bound, residual_bound })
    }

    pub fn leverage_only(leverage_bound: f64) -> Result<Self> {
        Self::new(leverage_bound, f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessViolation {
    pub index: usize,
    pub leverage: f64,
    pub abs_residual: f64,
    pub leverage_exceeded: bool,
    pub residual_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessReport {
    pub passed: bool,
    /// Set when the weighted covariance could not be factored.
    pub cause: Option<Error>,
    pub violations: Vec<GoodnessViolation>,
}

impl GoodnessReport {
    pub fn leverage_violations(&self) -> impl Iterator<Item = &GoodnessViolation> {
        self.violations.iter().filter(|v| v.leverage_exceeded)
    }

    pub fn residual_violations(&self) -> impl Iterator<Item = &GoodnessViolation> {
        self.violations.iter().filter(|v| v.residual_exceeded)
    }
}

/// Checks `(L, R)`-goodness of `w` for `data`.
pub fn check_goodness(data: &Dataset, w: &WeightVector, params: GoodnessParams) -> GoodnessReport {
    let state = match weighted_ols(data, w) {
        Ok(s) => s,
        Err(cause) => {
            return GoodnessReport { passed: false, cause: Some(cause), violations: Vec::new() }
        }
    };
    let violations: Vec<_> = (0..data.n())
        .filter(|&i| w.is_supported(i))
        .filter_map(|i| {
            let leverage = state.leverages[i];
            let abs_residual = state.residuals[i].abs();
            let leverage_exceeded = leverage > params.leverage_bound;
            let residual_exceeded = abs_residual > params.residual_bound;
            (leverage_exceeded || residual_exceeded).then_some(GoodnessViolation {
                index: i,
                leverage,
                abs_residual,
                leverage_exceeded,
                residual_exceeded,
            })
        })
        .collect();
    GoodnessReport { passed: violations.is_empty(), cause: None, violations }
}
