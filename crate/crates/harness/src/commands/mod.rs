pub mod accuracy;
pub mod bench;
pub mod fit;
pub mod generate;
pub mod sigma;
pub mod stability;

use crate::config::{key, KeySpec, Params};
use crate::error::{HarnessError, Result};
use crate::design::{parse_family, Design};
use dpols_core::{derived_constants, IsspConfig, ModelSpec};
use nalgebra::DVector;
use rayon::prelude::*;

/// Keys shared by every subcommand that runs the estimator.
pub const PRIVACY_KEYS: [KeySpec; 6] = [
    key("epsilon", Some("1"), "privacy parameter epsilon, in (0, 1]"),
    key("delta", Some("0.1"), "privacy parameter delta, in (0, epsilon/10]"),
    key("l0", None, "leverage threshold L0 (default: the largest value both guards allow)"),
    key("r0", None, "residual threshold R0 (required)"),
    key("override", None, "positive multiplier on the noise scale c^2"),
    key("c2", None, "target noise scale c^2; sets the multiplier (exclusive with override)"),
];

/// Keys describing the synthetic model.
pub const MODEL_KEYS: [KeySpec; 6] = [
    key("d", Some("2"), "number of covariates"),
    key("sigma", Some("1"), "label noise standard deviation"),
    key("kappa", Some("1"), "condition number of the covariance diag(kappa, 1, ..., 1)"),
    key("family", Some("gaussian"), "covariate family: gaussian or bounded"),
    key("design", Some("random"), "covariate design: random, circle or axes"),
    key("beta", None, "true coefficients, comma separated (default: all ones)"),
];

/// Model for `n` rows drawn under `seed`, with `kappa` given explicitly so
/// sweeps can override it.
pub fn model_spec(params: &Params, n: usize, kappa: f64, seed: u64) -> Result<ModelSpec> {
    let d = params.positive_count("d")?;
    let sigma: f64 = params.require("sigma")?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(HarnessError::usage(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(HarnessError::usage(format!("kappa must be positive, got {kappa}")));
    }
    let family = parse_family(&params.require::<String>("family")?)?;
    let mut spec = ModelSpec::isotropic(n, d, sigma, seed).with_condition_number(kappa).with_family(family);
    if let Some(beta) = params.list::<f64>("beta")? {
        if beta.len() != d {
            return Err(HarnessError::usage(format!("beta has {} entries, expected d = {d}", beta.len())));
        }
        spec.beta_star = DVector::from_vec(beta);
    }
    Ok(spec)
}

pub fn design(params: &Params) -> Result<Design> {
    Design::parse(&params.require::<String>("design")?)
}

/// Largest `l0` that passes both guards for `(epsilon, delta)`.
pub fn default_l0(epsilon: f64, delta: f64) -> f64 {
    let k = derived_constants(epsilon, delta, 1.0, 1.0).k as f64;
    (1.0 / (96.0 * k)).min(3.0 * epsilon / (56.0 * (12.0 / delta).ln()))
}

/// Estimator configuration from `epsilon`, `delta`, `l0`, `r0` and one of
/// `override` / `c2`.
pub fn issp_config(params: &Params) -> Result<IsspConfig> {
    let epsilon: f64 = params.require("epsilon")?;
    let delta: f64 = params.require("delta")?;
    let l0 = match params.get::<f64>("l0")? {
        Some(v) => v,
        None => default_l0(epsilon, delta),
    };
    let r0: f64 = params.require("r0")?;
    let multiplier = match (params.get::<f64>("override")?, params.get::<f64>("c2")?) {
        (Some(_), Some(_)) => return Err(HarnessError::usage("set at most one of `override` and `c2`")),
        (Some(m), None) => m,
        (None, Some(c2)) => {
            if !(c2 > 0.0 && c2.is_finite()) {
                return Err(HarnessError::usage(format!("c2 must be positive, got {c2}")));
            }
            let consts = derived_constants(epsilon, delta, l0, r0);
            (c2.ln() - consts.ln_c2).exp()
        }
        (None, None) => 1.0,
    };
    let mut cfg = IsspConfig::new(epsilon, delta, l0, r0).with_override(multiplier).with_seed(params.seed()?);
    cfg.strict_privacy = params.flag("strict_privacy")?;
    cfg.validate().map_err(|e| HarnessError::usage(e.to_string()))?;
    Ok(cfg)
}

/// Runs `f` over `0..count` on the worker pool; results keep index order.
pub fn par_map<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..count).into_par_iter().map(f).collect()
}

/// Like [`par_map`] for fallible work; the first error by index wins.
pub fn try_par_map<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    par_map(count, f).into_iter().collect()
}
