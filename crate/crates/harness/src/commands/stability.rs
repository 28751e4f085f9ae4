//! Adjacent-pair stability suite.
//!
//! Each trial draws a dataset, replaces one row according to an adjacency
//! mode, runs both filters on the two datasets and checks the stability and
//! goodness bounds below. A check is recorded as not applicable when its
//! hypotheses fail on that pair.
//!
//! | check | hypothesis | bound |
//! |---|---|---|
//! | `score1` | none | `\|S1 - S1'\| <= 2` |
//! | `gate_score` | none | `\|max(S1,S2) - max(S1',S2')\| <= 4` |
//! | `weights_w` | `S1, S1' < k` | `\|\|w - w'\|\|_1 <= 2` |
//! | `score2` | `S1, S1' < k` | `\|S2 - S2'\| <= 4` |
//! | `weights_v` | all four scores `< k` | `\|\|v - v'\|\|_1 <= 5` |
//! | `count_drift` | all four scores `< k` | `\|c_i - c_i'\| <= 1` off `i*` on `supp w ∩ supp w'` |
//! | `intertwining` | `S1, S1' < k`, `\|\|u_j\|\|_1 >= n - k` | `supp u_j ∩ supp w' \ {i*} ⊆ supp u'_{j+1}`, both directions |
//! | `goodness_u` | `S1 < k`, `\|\|u_j\|\|_1 >= n - k` | `u_j` is `(2 l0, R_j)`-good |
//! | `goodness_v` | `S1, S2 < k` | `v` is `(4 l0, 2 R_2k)`-good |
//! | `param_stability` | `v, v'` good, `(\|\|v-v'\|\|_1 + 2) 4 l0 <= 1/4` | `\|S_v^{1/2}(b_v - b_v')\|^2 <= 4 (\|\|v-v'\|\|_1 + 2)^2 (4 l0) (2 R_2k)^2` |
//! | `covariance_stability` | `v, v'` good, `(1 + \|\|v-v'\|\|_1) 4 l0 <= 1/2` | `d_PD(S_v, S_v') <= 2 (2 + \|\|v-v'\|\|_1) 4 l0` |
//! | `fast_path` | fit at `w` exists | single-pass filter equivalent to the per-level reference |

use super::{design, model_spec, par_map, MODEL_KEYS};
use crate::config::{key, KeySpec, Params};
use crate::csvio::fmt_f64;
use crate::design::{draw, Design};
use crate::error::{HarnessError, Result, Status};
use crate::output::RunOutput;
use crate::table::{Cell, ResultTable};
use dpols_core::dp::split_seed;
use dpols_core::leverage::LeverageFilterOutcome;
use dpols_core::linalg::psd_distance;
use dpols_core::residual::{fast_from_state, stable_residual_filtering, ResidualFilterOutcome};
use dpols_core::{
    check_goodness, make_adjacent, stable_leverage_filtering, weighted_ols, AdjacentMode, AdjacentPair, Dataset,
    Error as CoreError, GoodnessParams, ModelSpec, RngStream, WeightVector,
};
use serde_json::json;
use std::io::Write;

pub fn keys() -> Vec<KeySpec> {
    let mut keys = vec![
        key("n", Some("4000"), "rows per dataset"),
        key("k", Some("2"), "discretization parameter"),
        key("l0", None, "leverage threshold (default 1/(96k)); k * l0 must not exceed 1/96"),
        key("r0", Some("4.5"), "residual threshold"),
        key("trials", Some("500"), "adjacent pairs per mode"),
        key("modes", Some("resample,leverage-outlier,residual-outlier"), "adjacency modes"),
        key("magnitude", Some("50"), "outlier size for the outlier modes"),
    ];
    keys.extend(MODEL_KEYS);
    keys
}

pub const CHECKS: [&str; 12] = [
    "score1",
    "gate_score",
    "weights_w",
    "score2",
    "weights_v",
    "count_drift",
    "intertwining",
    "goodness_u",
    "goodness_v",
    "param_stability",
    "covariance_stability",
    "fast_path",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    NotApplicable,
    Pass,
    Fail,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::NotApplicable => "na",
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        }
    }
}

/// Worst observed value of one check on one pair, against its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub value: f64,
    pub bound: f64,
}

impl CheckOutcome {
    const NA: CheckOutcome = CheckOutcome { verdict: Verdict::NotApplicable, value: f64::NAN, bound: f64::NAN };

    fn measure(value: f64, bound: f64) -> Self {
        let verdict = if value <= bound { Verdict::Pass } else { Verdict::Fail };
        Self { verdict, value, bound }
    }

    fn flag(ok: bool) -> Self {
        Self::measure(if ok { 0.0 } else { 1.0 }, 0.0)
    }

    /// Keeps the failing or larger-margin observation.
    fn merge(self, other: CheckOutcome) -> Self {
        match (self.verdict, other.verdict) {
            (Verdict::NotApplicable, _) => other,
            (_, Verdict::NotApplicable) => self,
            (Verdict::Pass, Verdict::Fail) => other,
            (Verdict::Fail, Verdict::Pass) => self,
            _ if other.value - other.bound > self.value - self.bound => other,
            _ => self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub l0: f64,
    pub r0: f64,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub model: ModelSpec,
    pub design: Design,
    pub filter: FilterSettings,
    pub trials: usize,
    pub modes: Vec<AdjacentMode>,
    pub magnitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PairReport {
    pub mode: AdjacentMode,
    pub trial: usize,
    pub seed: u64,
    pub i_star: usize,
    pub score1: [usize; 2],
    pub score2: [f64; 2],
    pub w_distance: f64,
    pub v_distance: Option<f64>,
    /// Indexed like [`CHECKS`].
    pub checks: [CheckOutcome; 12],
}

impl PairReport {
    pub fn check(&self, name: &str) -> CheckOutcome {
        let i = CHECKS.iter().position(|c| *c == name).expect("known check");
        self.checks[i]
    }

    pub fn failed(&self) -> Vec<&'static str> {
        CHECKS.iter().zip(&self.checks).filter(|(_, c)| c.verdict == Verdict::Fail).map(|(n, _)| *n).collect()
    }
}

/// Seed of trial `trial` in mode `mode_index`.
pub fn trial_seed(root: u64, mode_index: usize, trial: usize) -> u64 {
    split_seed(split_seed(root, mode_index as u64), trial as u64)
}

/// Regenerates the adjacent pair of one trial.
pub fn make_pair(cfg: &SuiteConfig, mode: AdjacentMode, seed: u64) -> Result<AdjacentPair> {
    let mut spec = cfg.model.clone();
    spec.seed = seed;
    let data = draw(cfg.design, &spec)?;
    let mut rng = RngStream::new(seed).child(1);
    let i_star = rng.index(data.n());
    Ok(make_adjacent(&data, &spec, i_star, mode, cfg.magnitude, &mut rng)?)
}

struct Side {
    leverage: LeverageFilterOutcome,
    reference: Option<ResidualFilterOutcome>,
    fast_equivalent: Option<bool>,
    score2: f64,
}

impl Side {
    fn run(data: &Dataset, f: FilterSettings) -> Result<Self> {
        let kf = f.k as f64;
        let leverage = stable_leverage_filtering(data, f.l0, f.k)?;
        let saturated = |leverage| Side { leverage, reference: None, fast_equivalent: None, score2: kf };
        let fit_w = match weighted_ols(data, leverage.weights()) {
            Ok(s) => s,
            Err(CoreError::SingularCovariance { .. }) => return Ok(saturated(leverage)),
            Err(e) => return Err(e.into()),
        };
        let reference = stable_residual_filtering(data, leverage.weights(), f.l0, f.r0, f.k);
        let fast = fast_from_state(data, fit_w, f.l0, f.r0, f.k);
        match (reference, fast) {
            (Ok(r), Ok(fast)) => Ok(Side {
                fast_equivalent: Some(fast.equivalent_to(&r)),
                score2: r.score,
                reference: Some(r),
                leverage,
            }),
            (Err(CoreError::SingularCovariance { .. }), fast) => {
                let mut side = saturated(leverage);
                side.fast_equivalent = Some(fast.is_err() || fast.is_ok_and(|f| f.score == kf));
                Ok(side)
            }
            (Ok(r), Err(CoreError::SingularCovariance { .. })) => Ok(Side {
                fast_equivalent: Some(false),
                score2: r.score,
                reference: Some(r),
                leverage,
            }),
            (Err(e), _) | (_, Err(e)) => Err(e.into()),
        }
    }

    fn gate(&self) -> f64 {
        (self.leverage.score() as f64).max(self.score2)
    }
}

fn v_fit_is_good(data: &Dataset, side: &Side, f: FilterSettings, r2k: f64) -> Option<bool> {
    let k = f.k;
    let r = side.reference.as_ref()?;
    if side.leverage.score() >= k || side.score2 >= k as f64 {
        return None;
    }
    let params = GoodnessParams::new(4.0 * f.l0, 2.0 * r2k).ok()?;
    Some(check_goodness(data, &r.weights, params).passed)
}

/// Runs every check on one adjacent pair.
pub fn analyse_pair(pair: &AdjacentPair, f: FilterSettings) -> Result<([usize; 2], [f64; 2], f64, Option<f64>, [CheckOutcome; 12])> {
    let sides = [Side::run(&pair.base, f)?, Side::run(&pair.variant, f)?];
    let datasets = [&pair.base, &pair.variant];
    let n = pair.base.n();
    let k = f.k;
    let kf = k as f64;
    let s1 = [sides[0].leverage.score(), sides[1].leverage.score()];
    let s2 = [sides[0].score2, sides[1].score2];
    let lev_ok = s1[0] < k && s1[1] < k;
    let all_ok = lev_ok && s2[0] < kf && s2[1] < kf;
    let w = [sides[0].leverage.weights(), sides[1].leverage.weights()];
    let w_distance = w[0].l1_distance(w[1]);
    let v: Option<[&WeightVector; 2]> = match (&sides[0].reference, &sides[1].reference) {
        (Some(a), Some(b)) => Some([&a.weights, &b.weights]),
        _ => None,
    };
    let v_distance = v.map(|v| v[0].l1_distance(v[1]));
    let mut checks = [CheckOutcome::NA; 12];
    let set = |checks: &mut [CheckOutcome; 12], name: &str, c: CheckOutcome| {
        let i = CHECKS.iter().position(|n| *n == name).expect("known check");
        checks[i] = checks[i].merge(c);
    };

    set(&mut checks, "score1", CheckOutcome::measure((s1[0] as f64 - s1[1] as f64).abs(), 2.0));
    set(&mut checks, "gate_score", CheckOutcome::measure((sides[0].gate() - sides[1].gate()).abs(), 4.0));
    if lev_ok {
        set(&mut checks, "weights_w", CheckOutcome::measure(w_distance, 2.0));
        set(&mut checks, "score2", CheckOutcome::measure((s2[0] - s2[1]).abs(), 4.0));
    }
    if all_ok {
        if let (Some(dv), Some(a), Some(b)) = (v_distance, &sides[0].reference, &sides[1].reference) {
            set(&mut checks, "weights_v", CheckOutcome::measure(dv, 5.0));
            let (ca, cb) = (a.counts(), b.counts());
            let drift = (0..n)
                .filter(|&i| i != pair.i_star && w[0].is_supported(i) && w[1].is_supported(i))
                .map(|i| (ca[i] as f64 - cb[i] as f64).abs())
                .fold(0.0, f64::max);
            set(&mut checks, "count_drift", CheckOutcome::measure(drift, 1.0));
        }
    }

    let thresholds = dpols_core::residual::residual_thresholds(f.l0, f.r0, k);
    for side in 0..2 {
        let other = 1 - side;
        let Some(r) = &sides[side].reference else { continue };
        for j in 0..=2 * k {
            let u = r.level_weights(j);
            if u.l1() < (n - k) as f64 {
                continue;
            }
            if s1[side] < k {
                let params = GoodnessParams::new(2.0 * f.l0, thresholds[j])?;
                let report = check_goodness(datasets[side], &u, params);
                let bad = if report.cause.is_some() { u.support_len() } else { report.violations.len() };
                set(&mut checks, "goodness_u", CheckOutcome::measure(bad as f64, 0.0));
            }
            if lev_ok && j < 2 * k {
                if let Some(r_other) = &sides[other].reference {
                    let missing = (0..n)
                        .filter(|&i| i != pair.i_star && u.is_supported(i) && w[other].is_supported(i))
                        .filter(|&i| !r_other.level_contains(j + 1, i))
                        .count();
                    set(&mut checks, "intertwining", CheckOutcome::measure(missing as f64, 0.0));
                }
            }
        }
    }

    let r2k = thresholds[2 * k];
    let good = [
        v_fit_is_good(datasets[0], &sides[0], f, r2k),
        v_fit_is_good(datasets[1], &sides[1], f, r2k),
    ];
    for g in good.iter().flatten() {
        set(&mut checks, "goodness_v", CheckOutcome::flag(*g));
    }
    if let (Some(true), Some(true), Some(v), Some(dv)) = (good[0], good[1], v, v_distance) {
        let l = 4.0 * f.l0;
        let fits = (weighted_ols(datasets[0], v[0]), weighted_ols(datasets[1], v[1]));
        if let (Ok(a), Ok(b)) = fits {
            if (dv + 2.0) * l <= 0.25 {
                let diff = a.beta() - b.beta();
                let lhs = (diff.transpose() * a.gram() * &diff)[(0, 0)];
                let bound = 4.0 * (dv + 2.0).powi(2) * l * (2.0 * r2k).powi(2);
                set(&mut checks, "param_stability", CheckOutcome::measure(lhs, bound));
            }
            if (1.0 + dv) * l <= 0.5 {
                let dist = psd_distance(a.gram(), b.gram())?;
                set(&mut checks, "covariance_stability", CheckOutcome::measure(dist, 2.0 * (2.0 + dv) * l));
            }
        }
    }
    for side in &sides {
        if let Some(eq) = side.fast_equivalent {
            set(&mut checks, "fast_path", CheckOutcome::flag(eq));
        }
    }
    Ok((s1, s2, w_distance, v_distance, checks))
}

/// Runs all trials; reports are ordered by mode, then trial.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<PairReport>> {
    let jobs: Vec<(usize, AdjacentMode, usize)> = cfg
        .modes
        .iter()
        .enumerate()
        .flat_map(|(m, &mode)| (0..cfg.trials).map(move |t| (m, mode, t)))
        .collect();
    let mode_index = |mode: AdjacentMode| AdjacentMode::ALL.iter().position(|m| *m == mode).expect("known mode");
    par_map(jobs.len(), |i| {
        let (_, mode, trial) = jobs[i];
        let seed = trial_seed(cfg.seed, mode_index(mode), trial);
        let pair = make_pair(cfg, mode, seed)?;
        let (score1, score2, w_distance, v_distance, checks) = analyse_pair(&pair, cfg.filter)?;
        Ok(PairReport { mode, trial, seed, i_star: pair.i_star, score1, score2, w_distance, v_distance, checks })
    })
    .into_iter()
    .collect()
}

pub fn suite_config(params: &Params) -> Result<SuiteConfig> {
    let n = params.positive_count("n")?;
    let k = params.positive_count("k")?;
    let l0 = params.get::<f64>("l0")?.unwrap_or(1.0 / (96.0 * k as f64));
    if !(l0 > 0.0 && l0.is_finite()) {
        return Err(HarnessError::usage(format!("l0 must be positive, got {l0}")));
    }
    if k as f64 * l0 > 1.0 / 96.0 {
        return Err(HarnessError::usage(format!(
            "k * l0 = {} exceeds 1/96; the stability bounds are only claimed for k * l0 <= 1/96",
            fmt_f64(k as f64 * l0)
        )));
    }
    let r0: f64 = params.require("r0")?;
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(HarnessError::usage(format!("r0 must be positive, got {r0}")));
    }
    let modes = params
        .require_list::<String>("modes")?
        .iter()
        .map(|m| AdjacentMode::parse(m).ok_or_else(|| HarnessError::usage(format!("unknown adjacency mode `{m}`"))))
        .collect::<Result<Vec<_>>>()?;
    let model = model_spec(params, n, params.require("kappa")?, 0)?;
    if n <= model.d + k {
        return Err(HarnessError::usage(format!("n = {n} is too small for d = {} and k = {k}", model.d)));
    }
    Ok(SuiteConfig {
        model,
        design: design(params)?,
        filter: FilterSettings { l0, r0, k },
        trials: params.positive_count("trials")?,
        modes,
        magnitude: params.require("magnitude")?,
        seed: params.seed()?,
    })
}

const BASE_COLUMNS: &[(&str, &str)] = &[
    ("mode", "adjacency mode"),
    ("trial", "trial index within the mode"),
    ("seed", "trial seed; regenerates the pair"),
    ("i_star", "replaced row"),
    ("score1", "leverage-filter score on the base dataset"),
    ("score1_adj", "leverage-filter score on the neighbour"),
    ("score2", "residual-filter score on the base dataset"),
    ("score2_adj", "residual-filter score on the neighbour"),
    ("w_distance", "l1 distance between leverage-filter weights"),
    ("v_distance", "l1 distance between residual-filter weights"),
];

pub fn report_table(reports: &[PairReport]) -> ResultTable {
    let mut columns: Vec<(String, String)> = BASE_COLUMNS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    for c in CHECKS {
        columns.push((c.to_string(), format!("{c}: pass, fail or na")));
        columns.push((format!("{c}_value"), format!("{c}: worst observed value")));
    }
    let refs: Vec<(&str, &str)> = columns.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut table = ResultTable::new("stability", &refs);
    for r in reports {
        let mut row: Vec<Cell> = vec![
            r.mode.name().into(),
            r.trial.into(),
            r.seed.into(),
            r.i_star.into(),
            r.score1[0].into(),
            r.score1[1].into(),
            r.score2[0].into(),
            r.score2[1].into(),
            r.w_distance.into(),
            r.v_distance.into(),
        ];
        for c in &r.checks {
            row.push(c.verdict.name().into());
            row.push((c.verdict != Verdict::NotApplicable).then_some(c.value).into());
        }
        table.push(row);
    }
    table
}

/// Per-check totals: `(applicable, failures)`.
pub fn coverage(reports: &[PairReport]) -> Vec<(&'static str, usize, usize)> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let applicable = reports.iter().filter(|r| r.checks[i].verdict != Verdict::NotApplicable).count();
            let failures = reports.iter().filter(|r| r.checks[i].verdict == Verdict::Fail).count();
            (*name, applicable, failures)
        })
        .collect()
}

pub fn run(params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let cfg = suite_config(params)?;
    let mut out = RunOutput::create("stability", params)?;
    let reports = run_suite(&cfg)?;
    out.write_table("stability.csv", &report_table(&reports))?;

    let mut summary = ResultTable::new(
        "stability_summary",
        &[("check", "check name"), ("applicable", "pairs meeting the hypotheses"), ("failures", "pairs violating the bound")],
    );
    let _ = writeln!(stdout, "{} pairs, k = {}, l0 = {}, r0 = {}", reports.len(), cfg.filter.k, fmt_f64(cfg.filter.l0), fmt_f64(cfg.filter.r0));
    let mut violations = 0;
    for (name, applicable, failures) in coverage(&reports) {
        let _ = writeln!(stdout, "{name:<22} applicable {applicable:>6}  failures {failures}");
        summary.push(vec![name.into(), applicable.into(), failures.into()]);
        violations += failures;
    }
    out.write_table("stability_summary.csv", &summary)?;

    let failing: Vec<&PairReport> = reports.iter().filter(|r| !r.failed().is_empty()).collect();
    if !failing.is_empty() {
        let mut lines = String::new();
        for r in &failing {
            let pair = make_pair(&cfg, r.mode, r.seed)?;
            let stem = format!("reproducer-{}-{}", r.mode.name(), r.trial);
            let base = out.write_dataset(&format!("{stem}-base.csv"), &pair.base)?;
            let variant = out.write_dataset(&format!("{stem}-variant.csv"), &pair.variant)?;
            let record = json!({
                "mode": r.mode.name(),
                "trial": r.trial,
                "seed": r.seed.to_string(),
                "i_star": r.i_star,
                "failed": r.failed(),
                "base": base.file_name().map(|s| s.to_string_lossy().into_owned()),
                "variant": variant.file_name().map(|s| s.to_string_lossy().into_owned()),
                "l0": cfg.filter.l0,
                "r0": cfg.filter.r0,
                "k": cfg.filter.k,
            });
            lines.push_str(&record.to_string());
            lines.push('\n');
        }
        let path = out.path("reproducers.jsonl");
        std::fs::write(&path, lines).map_err(|e| HarnessError::io(&path, e))?;
        let _ = writeln!(stdout, "VIOLATION: {violations} check failures over {} pairs; reproducers in {}", failing.len(), path.display());
    }
    out.note(json!({"record": "summary", "pairs": reports.len(), "violations": violations}));
    out.finish()?;
    Ok(if violations == 0 { Status::Success } else { Status::Violation })
}
