//! Covariate designs used by the experiments.
//!
//! `random` draws i.i.d. rows from the model. The two deterministic designs
//! give every row the same leverage, which lets the filters pass with
//! certainty at sizes where random designs still have a few heavy rows:
//!
//! * `circle` (d = 2): `x_i = sqrt(2) (cos t_i, sin t_i)`, `t_i = 2 pi i / n`,
//! * `axes`: `x_i = sqrt(d) e_{i mod d}`, balanced when `d` divides `n`.
//!
//! Both are mapped through a square root of the model covariance, so
//! `X^T X = n Sigma` and every leverage equals `d / n`.

use crate::error::{HarnessError, Result};
use dpols_core::datagen::redraw_labels;
use dpols_core::{generate, CovariateFamily, Dataset, ModelSpec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    Random,
    Circle,
    Axes,
}

impl Design {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Design::Random),
            "circle" => Ok(Design::Circle),
            "axes" => Ok(Design::Axes),
            other => Err(HarnessError::usage(format!("unknown design `{other}` (random, circle, axes)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Design::Random => "random",
            Design::Circle => "circle",
            Design::Axes => "axes",
        }
    }
}

pub fn parse_family(s: &str) -> Result<CovariateFamily> {
    match s {
        "gaussian" => Ok(CovariateFamily::Gaussian),
        "bounded" => Ok(CovariateFamily::BoundedSubgaussian),
        other => Err(HarnessError::usage(format!("unknown covariate family `{other}` (gaussian, bounded)"))),
    }
}

/// Covariates of a deterministic design with zero labels.
pub fn deterministic_design(design: Design, spec: &ModelSpec) -> Result<Dataset> {
    let (n, d) = (spec.n, spec.d);
    let root = spec
        .covariance
        .clone()
        .cholesky()
        .ok_or_else(|| HarnessError::usage("covariance is not positive definite"))?
        .l();
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        let u = match design {
            Design::Circle => {
                if d != 2 {
                    return Err(HarnessError::usage("the circle design needs d = 2"));
                }
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let r = std::f64::consts::SQRT_2;
                nalgebra::DVector::from_vec(vec![r * t.cos(), r * t.sin()])
            }
            Design::Axes => {
                let mut u = nalgebra::DVector::zeros(d);
                u[i % d] = (d as f64).sqrt();
                u
            }
            Design::Random => unreachable!("random designs are sampled"),
        };
        x.extend((&root * u).iter());
    }
    Ok(Dataset::new(x, vec![0.0; n], d)?)
}

/// Draws a dataset: sampled rows for `random`, otherwise the fixed design
/// with labels drawn from the model under `spec.seed`.
pub fn draw(design: Design, spec: &ModelSpec) -> Result<Dataset> {
    match design {
        Design::Random => Ok(generate(spec)?),
        _ => {
            let x = deterministic_design(design, spec)?;
            Ok(redraw_labels(&x, spec, &mut RngStream::new(spec.seed))?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpols_core::{weighted_ols, WeightVector};

    #[test]
    fn deterministic_designs_have_flat_leverage() {
        for (design, n, d) in [(Design::Circle, 300, 2), (Design::Axes, 300, 3)] {
            let spec = ModelSpec::isotropic(n, d, 1.0, 0).with_condition_number(1e4);
            let data = draw(design, &spec).unwrap();
            let fit = weighted_ols(&data, &WeightVector::ones(n)).unwrap();
            for &h in fit.leverages() {
                assert!((h - d as f64 / n as f64).abs() < 1e-9, "{design:?}: {h}");
            }
            let gram = data.design_matrix().transpose() * data.design_matrix();
            assert!((gram / n as f64 - &spec.covariance).amax() < 1e-8);
        }
        assert!(deterministic_design(Design::Circle, &ModelSpec::isotropic(10, 3, 1.0, 0)).is_err());
    }
}
