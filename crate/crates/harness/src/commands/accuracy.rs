use super::{design, issp_config, model_spec, par_map, MODEL_KEYS, PRIVACY_KEYS};
use crate::config::{key, KeySpec, Params};
use crate::csvio::fmt_f64;
use crate::design::{draw, Design};
use crate::error::{HarnessError, Result, Status};
use crate::output::RunOutput;
use crate::plot::{LineChart, Series};
use crate::stats::{mean_se, one_way_anova, sigma_norm};
use crate::table::ResultTable;
use dpols_core::datagen::redraw_labels;
use dpols_core::dp::split_seed;
use dpols_core::{issp_fit, weighted_ols, Dataset, IsspConfig, ModelSpec, RngStream, WeightVector};
use serde_json::json;
use std::io::Write;

/// Significance level below which the error is declared to depend on kappa.
pub const ANOVA_LEVEL: f64 = 1e-3;

pub fn keys() -> Vec<KeySpec> {
    let mut keys = vec![
        key("n_grid", Some("12000"), "sample sizes, comma separated"),
        key("kappa_grid", Some("1"), "condition numbers, comma separated"),
        key("trials", Some("200"), "fits per (n, kappa) cell"),
        key("fixed_design", Some("false"), "draw covariates once per cell and only redraw labels"),
    ];
    keys.extend(MODEL_KEYS);
    keys.extend(PRIVACY_KEYS);
    keys
}

#[derive(Debug, Clone)]
pub struct AccuracyConfig {
    pub model: ModelSpec,
    pub design: Design,
    pub n_grid: Vec<usize>,
    pub kappa_grid: Vec<f64>,
    pub trials: usize,
    pub fixed_design: bool,
    pub fit: IsspConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub n: usize,
    pub kappa: f64,
    pub trial: usize,
    pub seed: u64,
    pub released: bool,
    /// `||b - beta*||_Sigma / sigma`, or unscaled when `sigma = 0`.
    pub error: Option<f64>,
    /// Mean squared prediction error of the release minus that of the OLS fit.
    pub excess_mse: Option<f64>,
    /// `c^2 d / n`.
    pub mse_target: f64,
    /// `||b - b_ols||_Sigma^2`.
    pub ols_gap: Option<f64>,
    /// `c^2 tr(Sigma (X^T X)^{-1})`.
    pub ols_gap_target: f64,
}

fn cell_seed(root: u64, n_index: usize, kappa_index: usize) -> u64 {
    split_seed(split_seed(root, n_index as u64), kappa_index as u64)
}

fn trial(cfg: &AccuracyConfig, design_x: Option<&Dataset>, spec: &ModelSpec, cell: u64, t: usize) -> Result<TrialRecord> {
    let seed = split_seed(cell, t as u64);
    let mut spec = spec.clone();
    spec.seed = split_seed(seed, 0);
    let data = match design_x {
        Some(x) => redraw_labels(x, &spec, &mut RngStream::new(spec.seed))?,
        None => draw(cfg.design, &spec)?,
    };
    let fit_cfg = cfg.fit.with_seed(split_seed(seed, 1));
    let out = issp_fit(&data, &fit_cfg, &mut RngStream::new(fit_cfg.seed))?;
    let n = data.n();
    let d = data.d() as f64;
    let ols = weighted_ols(&data, &WeightVector::ones(n))?;
    let sigma = &spec.covariance;
    let ols_gap_target = out.c2 * (sigma * ols.s_inv()).trace();
    let mse_target = out.c2 * d / n as f64;
    let mut record = TrialRecord {
        n,
        kappa: spec.covariance[(0, 0)],
        trial: t,
        seed,
        released: false,
        error: None,
        excess_mse: None,
        mse_target,
        ols_gap: None,
        ols_gap_target,
    };
    if let Some(b) = out.estimate() {
        let scale = if spec.sigma > 0.0 { spec.sigma } else { 1.0 };
        let x = data.design_matrix();
        let gap = b - ols.beta();
        // ||Xb - y||^2 - ||X b_ols - y||^2 = ||X (b - b_ols)||^2 by orthogonality of the OLS residual
        let excess = (&x * &gap).norm_squared() / n as f64;
        record.released = true;
        record.error = Some(sigma_norm(&(b - &spec.beta_star), sigma) / scale);
        record.excess_mse = Some(excess);
        record.ols_gap = Some(sigma_norm(&gap, sigma).powi(2));
    }
    Ok(record)
}

/// Every trial of the grid, ordered by n, then kappa, then trial.
pub fn run_grid(cfg: &AccuracyConfig, root_seed: u64) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for (ni, &n) in cfg.n_grid.iter().enumerate() {
        for (ki, &kappa) in cfg.kappa_grid.iter().enumerate() {
            let mut spec = cfg.model.clone().with_condition_number(kappa);
            spec.n = n;
            let cell = cell_seed(root_seed, ni, ki);
            let design_x = if cfg.fixed_design {
                let mut s = spec.clone();
                s.seed = split_seed(cell, u64::MAX);
                Some(draw(cfg.design, &s)?)
            } else {
                None
            };
            let batch = par_map(cfg.trials, |t| trial(cfg, design_x.as_ref(), &spec, cell, t));
            for r in batch {
                records.push(r?);
            }
        }
    }
    Ok(records)
}

pub fn accuracy_config(params: &Params) -> Result<AccuracyConfig> {
    let n_grid: Vec<usize> = params.require_list("n_grid")?;
    let kappa_grid: Vec<f64> = params.require_list("kappa_grid")?;
    let model = model_spec(params, n_grid[0], kappa_grid[0], 0)?;
    for &n in &n_grid {
        if n <= model.d {
            return Err(HarnessError::usage(format!("n = {n} must exceed d = {}", model.d)));
        }
    }
    for &kappa in &kappa_grid {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(HarnessError::usage(format!("kappa must be positive, got {kappa}")));
        }
    }
    Ok(AccuracyConfig {
        model,
        design: design(params)?,
        n_grid,
        kappa_grid,
        trials: params.positive_count("trials")?,
        fixed_design: params.flag("fixed_design")?,
        fit: issp_config(params)?,
    })
}

/// Records of one (n, kappa) cell.
pub fn cell(records: &[TrialRecord], n: usize, kappa: f64) -> impl Iterator<Item = &TrialRecord> {
    records.iter().filter(move |r| r.n == n && r.kappa == kappa)
}

pub fn released_values(records: &[TrialRecord], n: usize, kappa: f64, f: impl Fn(&TrialRecord) -> Option<f64>) -> Vec<f64> {
    cell(records, n, kappa).filter_map(f).collect()
}

const TRIAL_COLUMNS: &[(&str, &str)] = &[
    ("n", "rows"),
    ("kappa", "condition number of the covariance"),
    ("trial", "trial index"),
    ("seed", "trial seed"),
    ("released", "whether the estimator released a vector"),
    ("error", "Sigma-norm error against the true coefficients, over sigma"),
    ("excess_mse", "mean squared prediction error above the least-squares fit"),
    ("mse_target", "c^2 d / n"),
    ("ols_gap", "squared Sigma-norm distance to the least-squares fit"),
    ("ols_gap_target", "c^2 tr(Sigma (X^T X)^-1)"),
];

pub fn run(params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let cfg = accuracy_config(params)?;
    let seed = params.seed()?;
    let mut out = RunOutput::create("accuracy", params)?;
    let records = run_grid(&cfg, seed)?;

    let mut trials = ResultTable::new("accuracy", TRIAL_COLUMNS);
    for r in &records {
        trials.push(vec![
            r.n.into(),
            r.kappa.into(),
            r.trial.into(),
            r.seed.into(),
            r.released.into(),
            r.error.into(),
            r.excess_mse.into(),
            r.mse_target.into(),
            r.ols_gap.into(),
            r.ols_gap_target.into(),
        ]);
    }
    out.write_table("accuracy.csv", &trials)?;

    let mut summary = ResultTable::new(
        "accuracy_summary",
        &[
            ("n", "rows"),
            ("kappa", "condition number"),
            ("trials", "fits"),
            ("released", "fits that released"),
            ("error_mean", "mean Sigma-norm error over sigma"),
            ("error_se", "standard error of error_mean"),
            ("excess_mse_mean", "mean excess prediction error"),
            ("excess_mse_se", "standard error of excess_mse_mean"),
            ("mse_target", "mean of c^2 d / n"),
            ("mse_z", "(excess_mse_mean - mse_target) / excess_mse_se"),
            ("ols_gap_ratio", "mean ols_gap over mean ols_gap_target"),
        ],
    );
    let mut chart = LineChart {
        title: "estimation error".into(),
        x_label: "n".into(),
        y_label: "Sigma-norm error / sigma".into(),
        log_x: true,
        log_y: true,
        series: Vec::new(),
    };
    let _ = writeln!(stdout, "{:>8} {:>10} {:>8} {:>12} {:>10} {:>8}", "n", "kappa", "released", "error", "se", "mse_z");
    let mut released_total = 0;
    for &kappa in &cfg.kappa_grid {
        let mut series = Series { name: format!("kappa = {}", fmt_f64(kappa)), points: Vec::new() };
        for &n in &cfg.n_grid {
            let count = cell(&records, n, kappa).count();
            let released = cell(&records, n, kappa).filter(|r| r.released).count();
            released_total += released;
            let (em, ese) = mean_se(&released_values(&records, n, kappa, |r| r.error));
            let (mm, mse) = mean_se(&released_values(&records, n, kappa, |r| r.excess_mse));
            let (target, _) = mean_se(&released_values(&records, n, kappa, |r| r.released.then_some(r.mse_target)));
            let z = (mm - target) / mse;
            let gap: f64 = released_values(&records, n, kappa, |r| r.ols_gap).iter().sum();
            let gap_target: f64 = released_values(&records, n, kappa, |r| r.released.then_some(r.ols_gap_target)).iter().sum();
            let ratio = gap / gap_target;
            summary.push(vec![
                n.into(),
                kappa.into(),
                count.into(),
                released.into(),
                em.into(),
                ese.into(),
                mm.into(),
                mse.into(),
                target.into(),
                z.into(),
                ratio.into(),
            ]);
            let _ = writeln!(stdout, "{n:>8} {:>10} {released:>8} {:>12} {:>10} {:>8}", fmt_f64(kappa), fmt_f64(em), fmt_f64(ese), format!("{z:.2}"));
            if em.is_finite() {
                series.points.push((n as f64, em, if ese.is_finite() { ese } else { 0.0 }));
            }
        }
        chart.series.push(series);
    }
    out.write_table("accuracy_summary.csv", &summary)?;

    if cfg.kappa_grid.len() > 1 {
        let mut anova_table = ResultTable::new(
            "accuracy_anova",
            &[
                ("n", "rows"),
                ("groups", "condition numbers compared"),
                ("f", "F statistic of the error across kappa"),
                ("p_value", "ANOVA p-value"),
                ("flat", "p_value >= 1e-3"),
            ],
        );
        for &n in &cfg.n_grid {
            let groups: Vec<Vec<f64>> =
                cfg.kappa_grid.iter().map(|&k| released_values(&records, n, k, |r| r.error)).collect();
            let a = one_way_anova(&groups);
            let p = a.map(|a| a.p_value);
            let _ = writeln!(
                stdout,
                "n = {n}: ANOVA across kappa p = {}",
                p.map_or("n/a (too few releases)".to_string(), fmt_f64)
            );
            anova_table.push(vec![
                n.into(),
                groups.len().into(),
                a.map(|a| a.f).into(),
                p.into(),
                p.map(|p| p >= ANOVA_LEVEL).into(),
            ]);
        }
        out.write_table("accuracy_anova.csv", &anova_table)?;
    }
    if let Some(path) = out.write_svg("accuracy.svg", &chart.to_svg())? {
        let _ = writeln!(stdout, "plot: {}", path.display());
    }
    out.note(json!({"record": "summary", "trials": records.len(), "released": released_total}));
    out.finish()?;
    if released_total == 0 {
        let _ = writeln!(stdout, "FAIL: no fit released an estimate");
        return Ok(Status::DefinedFailure);
    }
    Ok(Status::Success)
}
