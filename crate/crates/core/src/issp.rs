//! The private OLS estimator: leverage filtering, residual filtering, a
//! propose-test-release gate on the two scores, and a release drawn from
//! `N(beta_v, c^2 S_v^{-1})`.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::dp::{ptr_check, sample_shaped_gaussian, PrivacyParams, PtrVerdict, RngStream};
use crate::error::{Error, Result};
use crate::leverage::stable_leverage_filtering;
use crate::linalg::{weighted_ols, Dataset, RegressionState};
use crate::residual::fast_from_state;

/// Sensitivity of `max{SCORE_1, SCORE_2}` used for the gate.
pub const SCORE_SENSITIVITY: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsspConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Leverage outlier threshold `L_0`.
    pub l0: f64,
    /// Residual outlier threshold `R_0`.
    pub r0: f64,
    /// Multiplier applied to `c^2`; 1 reproduces the theoretical constant.
    pub noise_scale_override: f64,
    pub seed: u64,
    /// Drop every data-dependent diagnostic from the output.
    pub strict_privacy: bool,
}

impl IsspConfig {
    pub fn new(epsilon: f64, delta: f64, l0: f64, r0: f64) -> Self {
        Self { epsilon, delta, l0, r0, noise_scale_override: 1.0, seed: 0, strict_privacy: false }
    }

    pub fn with_override(mut self, multiplier: f64) -> Self {
        self.noise_scale_override = multiplier;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta <= self.epsilon / 10.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must be in (0, epsilon/10], got {}",
                self.delta
            )));
        }
        if !(self.l0 > 0.0 && self.l0.is_finite()) || !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidParameter("l0 and r0 must be positive and finite".into()));
        }
        if !(self.noise_scale_override > 0.0 && self.noise_scale_override.is_finite()) {
            return Err(Error::InvalidParameter("noise scale override must be positive".into()));
        }
        Ok(())
    }
}

/// `k`, `c^2` and the two leverage guards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub k: usize,
    /// Natural log of `c^2`; finite even when `c^2` overflows.
    pub ln_c2: f64,
    pub c2: f64,
    /// `l0 <= 1 / (96 k)`.
    pub discretization_guard: bool,
    /// `l0 <= 3 epsilon / (56 ln(12/delta))`.
    pub privacy_guard: bool,
}

impl DerivedConstants {
    pub fn guards_pass(&self) -> bool {
        self.discretization_guard && self.privacy_guard
    }

    /// `c^2` times `multiplier`, computed in log space.
    pub fn scaled_c2(&self, multiplier: f64) -> f64 {
        (self.ln_c2 + multiplier.ln()).exp()
    }
}

/// `k = ceil(12 ln(3/delta) / epsilon) + 8` and
/// `c^2 = 56448 exp(432 k^2 l0) l0 r0^2 ln(12/delta) / epsilon^2`.
pub fn derived_constants(epsilon: f64, delta: f64, l0: f64, r0: f64) -> DerivedConstants {
    let k = (12.0 * (3.0 / delta).ln() / epsilon).ceil() as usize + 8;
    let kf = k as f64;
    let ln_c2 = 56448f64.ln() + 432.0 * kf * kf * l0 + l0.ln() + 2.0 * r0.ln()
        + (12.0 / delta).ln().ln()
        - 2.0 * epsilon.ln();
    DerivedConstants {
        k,
        ln_c2,
        c2: ln_c2.exp(),
        discretization_guard: l0 <= 1.0 / (96.0 * kf),
        privacy_guard: l0 <= 3.0 * epsilon / (56.0 * (12.0 / delta).ln()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// `l0` is too large for the given privacy parameters.
    LeverageGuard,
    /// The propose-test-release gate rejected the scores.
    GateRejected,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Fail(FailReason),
    Estimate(DVector<f64>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub leverage_filter: Duration,
    pub residual_filter: Duration,
    pub gate: Duration,
    pub release: Duration,
}

/// Data-dependent quantities. `None` throughout in strict-privacy mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub score1: Option<usize>,
    pub score2: Option<f64>,
    pub v_l1: Option<f64>,
    /// Set when a filter hit a singular covariance (scored as `k`).
    pub singular: Option<String>,
    /// Rank-one reweights applied to reach `S_v` from the leverage-filter fit.
    pub reweights: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsspOutput {
    pub outcome: Outcome,
    pub k: usize,
    /// `c^2` after the override multiplier.
    pub c2: f64,
    pub diagnostics: Diagnostics,
    pub timings: PhaseTimings,
}

impl IsspOutput {
    pub fn estimate(&self) -> Option<&DVector<f64>> {
        match &self.outcome {
            Outcome::Estimate(b) => Some(b),
            Outcome::Fail(_) => None,
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self.outcome, Outcome::Fail(_))
    }
}

/// Result of the filtering stages, before the gate.
///
/// `state_v` holds the fit at the residual-filter weights `v`; it is `None`
/// when a filter failed (the scores are then saturated at `k`).
#[derive(Debug, Clone)]
pub struct FilterStage {
    pub score1: usize,
    pub score2: f64,
    pub state_v: Option<RegressionState>,
    pub singular: Option<String>,
    pub reweights: usize,
    pub leverage_time: Duration,
    pub residual_time: Duration,
}

impl FilterStage {
    pub fn gate_score(&self) -> f64 {
        (self.score1 as f64).max(self.score2)
    }
}

/// Runs both filters and builds the fit at `v` from the leverage-filter fit
/// with at most `k` rank-one reweights.
pub fn run_filters(data: &Dataset, l0: f64, r0: f64, k: usize) -> Result<FilterStage> {
    let kf = k as f64;
    let started = Instant::now();
    let leverage = stable_leverage_filtering(data, l0, k)?;
    let leverage_time = started.elapsed();
    let score1 = leverage.score();

    let started = Instant::now();
    let fit_w = match weighted_ols(data, leverage.weights()) {
        Ok(state) => state,
        Err(e) => {
            return Ok(FilterStage {
                score1,
                score2: kf,
                state_v: None,
                singular: Some(e.to_string()),
                reweights: 0,
                leverage_time,
                residual_time: started.elapsed(),
            })
        }
    };
    let residual = match fast_from_state(data, fit_w.clone(), l0, r0, k) {
        Ok(r) => r,
        Err(e @ Error::SingularCovariance { .. }) => {
            return Ok(FilterStage {
                score1,
                score2: kf,
                state_v: None,
                singular: Some(e.to_string()),
                reweights: 0,
                leverage_time,
                residual_time: started.elapsed(),
            })
        }
        Err(e) => return Err(e),
    };

    let mut state_v = fit_w;
    let mut reweights = 0;
    let mut singular = None;
    for (i, (&vi, &wi)) in residual.weights.as_slice().iter().zip(leverage.weights().as_slice()).enumerate() {
        if vi != wi {
            if let Err(e) = state_v.reweight(data, i, vi) {
                singular = Some(e.to_string());
                break;
            }
            reweights += 1;
        }
    }
    debug_assert!(singular.is_some() || reweights <= k || residual.score >= kf);
    #[cfg(debug_assertions)]
    if singular.is_none() && residual.weights.l1() > 0.0 {
        if let Ok(direct) = weighted_ols(data, &residual.weights) {
            let scale = direct.beta().norm().max(1.0);
            debug_assert!((direct.beta() - state_v.beta()).norm() <= 1e-6 * scale);
        }
    }
    let residual_time = started.elapsed();

    Ok(FilterStage {
        score1,
        score2: if singular.is_some() { kf } else { residual.score },
        state_v: if singular.is_some() { None } else { Some(state_v) },
        singular,
        reweights,
        leverage_time,
        residual_time,
    })
}

/// The full estimator.
pub fn issp_fit(data: &Dataset, cfg: &IsspConfig, rng: &mut RngStream) -> Result<IsspOutput> {
    cfg.validate()?;
    let consts = derived_constants(cfg.epsilon, cfg.delta, cfg.l0, cfg.r0);
    let c2 = consts.scaled_c2(cfg.noise_scale_override);
    let mut out = IsspOutput {
        outcome: Outcome::Fail(FailReason::LeverageGuard),
        k: consts.k,
        c2,
        diagnostics: Diagnostics::default(),
        timings: PhaseTimings::default(),
    };
    if !consts.guards_pass() {
        return Ok(out);
    }
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "c^2 = exp({:.1}) is not representable; supply a noise scale override",
            consts.ln_c2 + cfg.noise_scale_override.ln()
        )));
    }

    let stage = run_filters(data, cfg.l0, cfg.r0, consts.k)?;
    out.timings.leverage_filter = stage.leverage_time;
    out.timings.residual_filter = stage.residual_time;
    if !cfg.strict_privacy {
        out.diagnostics = Diagnostics {
            score1: Some(stage.score1),
            score2: Some(stage.score2),
            v_l1: stage.state_v.as_ref().map(|s| s.weights().l1()),
            singular: stage.singular.clone(),
            reweights: Some(stage.reweights),
        };
    }

    let started = Instant::now();
    let gate = PrivacyParams::new(cfg.epsilon / 3.0, cfg.delta / 3.0, SCORE_SENSITIVITY)?;
    let verdict = ptr_check(stage.gate_score(), &gate, rng);
    out.timings.gate = started.elapsed();
    out.outcome = Outcome::Fail(FailReason::GateRejected);
    if verdict == PtrVerdict::Fail {
        return Ok(out);
    }
    // a pass implies both scores are below k, hence the fit exists
    let state = stage.state_v.expect("gate passes only with a valid fit");

    let started = Instant::now();
    let beta_tilde = sample_shaped_gaussian(state.beta(), state.gram(), c2, rng)?;
    out.timings.release = started.elapsed();
    out.outcome = Outcome::Estimate(beta_tilde);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_for_unit_epsilon() {
        let c = derived_constants(1.0, 0.1, 1e-4, 1.0);
        assert_eq!(c.k, 49);
        assert_eq!(c.k, (12.0 * 30f64.ln()).ceil() as usize + 8);
    }

    #[test]
    fn c2_at_the_discretization_limit() {
        let l0 = 1.0 / (96.0 * 49.0);
        let c = derived_constants(1.0, 0.1, l0, 1.0);
        assert!((432.0 * 49.0 * 49.0 * l0 - 220.5).abs() < 1e-9);
        let expected = 56448f64.ln() + 220.5 + l0.ln() + 120f64.ln().ln();
        assert!((c.ln_c2 - expected).abs() < 1e-9);
        assert!(c.c2 > 1e90);
        assert!(c.discretization_guard && c.privacy_guard);
    }

    #[test]
    fn c2_vanishes_linearly_in_l0() {
        let a = derived_constants(1.0, 0.1, 1e-9, 1.0).c2;
        let b = derived_constants(1.0, 0.1, 1e-10, 1.0).c2;
        let drift = (432.0 * 49.0f64.powi(2) * 9e-10).exp();
        assert!((a / b - 10.0 * drift).abs() < 1e-9);
    }

    #[test]
    fn guard_equivalence() {
        let (eps, delta) = (0.7, 0.05);
        let k = derived_constants(eps, delta, 1e-6, 1.0).k as f64;
        let limit = (1.0 / (96.0 * k)).min(3.0 * eps / (56.0 * (12.0f64 / delta).ln()));
        for l0 in [limit * 0.5, limit, limit * 1.0001, limit * 3.0] {
            let c = derived_constants(eps, delta, l0, 1.0);
            assert_eq!(c.guards_pass(), l0 <= limit, "l0 = {l0}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(IsspConfig::new(0.0, 0.01, 1e-4, 1.0).validate().is_err());
        assert!(IsspConfig::new(0.5, 0.2, 1e-4, 1.0).validate().is_err());
        assert!(IsspConfig::new(0.5, 0.05, -1.0, 1.0).validate().is_err());
        assert!(IsspConfig::new(0.5, 0.05, 1e-4, 1.0).with_override(0.0).validate().is_err());
        assert!(IsspConfig::new(1.0, 0.1, 1e-4, 1.0).validate().is_ok());
    }

    #[test]
    fn guard_violation_fails_deterministically() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0, i as f64]).collect();
        let data = Dataset::from_rows(&rows, vec![1.0; 50]).unwrap();
        let l0 = 1.0 / (96.0 * 49.0) + 1e-6;
        let cfg = IsspConfig::new(1.0, 0.1, l0, 1.0);
        for seed in 0..20 {
            let out = issp_fit(&data, &cfg, &mut RngStream::new(seed)).unwrap();
            assert_eq!(out.outcome, Outcome::Fail(FailReason::LeverageGuard));
        }
    }
}
