//! Phase timings of the estimator over a grid of sample sizes.
//!
//! The `overhead` phase is the single-pass residual filter started from an
//! existing unit-weight fit, i.e. everything after the one factorization.

use super::default_l0;
use crate::config::{key, KeySpec, Params};
use crate::csvio::fmt_f64;
use crate::error::{HarnessError, Result, Status};
use crate::output::RunOutput;
use crate::plot::{LineChart, Series};
use crate::stats::fit_line;
use crate::table::ResultTable;
use dpols_core::dp::split_seed;
use dpols_core::residual::fast_from_state;
use dpols_core::{
    derived_constants, generate, ptr_check, sample_shaped_gaussian, stable_leverage_filtering,
    stable_residual_filtering, weighted_ols, Dataset, Error as CoreError, ModelSpec, PrivacyParams, RngStream,
    WeightVector,
};
use serde_json::json;
use std::io::Write;
use std::time::Instant;

pub const PHASES: [&str; 6] = ["factorization", "leverage_filter", "overhead", "reference_filter", "gate", "release"];

pub const KEYS: &[KeySpec] = &[
    key("n_grid", Some("2000,4000,8000,16000"), "sample sizes, comma separated"),
    key("d", Some("20"), "number of covariates"),
    key("repeats", Some("5"), "timed repetitions per size; the median is reported"),
    key("outliers", Some("10"), "rows whose label is shifted by 100 sigma"),
    key("sigma", Some("1"), "label noise standard deviation"),
    key("epsilon", Some("1"), "privacy parameter epsilon"),
    key("delta", Some("0.1"), "privacy parameter delta"),
    key("l0", None, "leverage threshold (default: the largest value both guards allow)"),
    key("r0", Some("4"), "residual threshold"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub d: usize,
    pub repeats: usize,
    pub outliers: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub l0: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Median seconds per phase, indexed like [`PHASES`].
    pub seconds: [f64; 6],
    /// Rows removed at the lowest level the single-pass filter completed.
    pub removed: usize,
    pub equivalent: bool,
}

/// Gaussian data with the first `outliers` labels shifted by `100 sigma`.
pub fn bench_data(n: usize, s: &BenchSettings, seed: u64) -> Result<Dataset> {
    let spec = ModelSpec::isotropic(n, s.d, s.sigma, seed);
    let data = generate(&spec)?;
    let mut y = data.y().to_vec();
    for v in y.iter_mut().take(s.outliers.min(n)) {
        *v += 100.0 * s.sigma.max(1.0);
    }
    Ok(data.with_responses(y)?)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let started = Instant::now();
    let out = f();
    (out, started.elapsed().as_secs_f64())
}

/// Times every phase at one size. Runs sequentially so timings are not
/// disturbed by other work.
pub fn bench_size(n: usize, s: &BenchSettings, seed: u64) -> Result<BenchRow> {
    let data = bench_data(n, s, seed)?;
    let k = derived_constants(s.epsilon, s.delta, s.l0, s.r0).k;
    let ones = WeightVector::ones(n);
    let gate_params = PrivacyParams::new(s.epsilon / 3.0, s.delta / 3.0, 4.0)?;
    let mut rng = RngStream::new(split_seed(seed, 1));
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); PHASES.len()];
    let mut removed = 0;
    let mut equivalent = true;

    for _ in 0..s.repeats {
        let (state, t) = timed(|| weighted_ols(&data, &ones));
        let state = state?;
        samples[0].push(t);
        let (lev, t) = timed(|| stable_leverage_filtering(&data, s.l0, k));
        lev?;
        samples[1].push(t);
        let start = state.clone();
        let (fast, t) = timed(|| fast_from_state(&data, start, s.l0, s.r0, k));
        samples[2].push(t);
        let (reference, t) = timed(|| stable_residual_filtering(&data, &ones, s.l0, s.r0, k));
        samples[3].push(t);
        match (fast, reference) {
            (Ok(f), Ok(r)) => {
                removed = f.levels.iter().filter(|l| !l.cleared).map(|l| l.removed.len()).max().unwrap_or(0);
                equivalent &= f.equivalent_to(&r);
            }
            (Err(CoreError::SingularCovariance { .. }), Err(CoreError::SingularCovariance { .. })) => {}
            (Err(e), _) | (_, Err(e)) if !matches!(e, CoreError::SingularCovariance { .. }) => return Err(e.into()),
            _ => equivalent = false,
        }
        let (_, t) = timed(|| ptr_check(0.0, &gate_params, &mut rng));
        samples[4].push(t);
        let (draw, t) = timed(|| sample_shaped_gaussian(state.beta(), state.gram(), 1.0, &mut rng));
        draw?;
        samples[5].push(t);
    }
    let mut seconds = [0.0; 6];
    for (slot, xs) in seconds.iter_mut().zip(samples) {
        *slot = median(xs);
    }
    Ok(BenchRow { n, seconds, removed, equivalent })
}

/// Log-log slope of the overhead phase against n.
pub fn overhead_slope(rows: &[BenchRow]) -> f64 {
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds[2].max(1e-9).ln()).collect();
    fit_line(&x, &y).0
}

pub fn settings(params: &Params) -> Result<BenchSettings> {
    let epsilon: f64 = params.require("epsilon")?;
    let delta: f64 = params.require("delta")?;
    if !(epsilon > 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(HarnessError::usage("need epsilon > 0 and delta in (0, 1)"));
    }
    let s = BenchSettings {
        d: params.positive_count("d")?,
        repeats: params.positive_count("repeats")?,
        outliers: params.require("outliers")?,
        sigma: params.require("sigma")?,
        epsilon,
        delta,
        l0: params.get("l0")?.unwrap_or_else(|| default_l0(epsilon, delta)),
        r0: params.require("r0")?,
    };
    if !(s.l0 > 0.0 && s.r0 > 0.0 && s.sigma >= 0.0) {
        return Err(HarnessError::usage("need l0 > 0, r0 > 0 and sigma >= 0"));
    }
    Ok(s)
}

pub fn run(params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let s = settings(params)?;
    let n_grid: Vec<usize> = params.require_list("n_grid")?;
    if let Some(&n) = n_grid.iter().find(|&&n| n <= s.d + s.outliers) {
        return Err(HarnessError::usage(format!("n = {n} must exceed d + outliers = {}", s.d + s.outliers)));
    }
    let seed = params.seed()?;
    let mut out = RunOutput::create("bench", params)?;
    let mut rows = Vec::new();
    for (i, &n) in n_grid.iter().enumerate() {
        rows.push(bench_size(n, &s, split_seed(seed, i as u64))?);
    }

    let mut columns = vec![("n", "rows"), ("removed", "rows removed at the lowest completed residual level"), ("equivalent", "single-pass filter matched the reference")];
    for p in PHASES {
        columns.push((p, "median seconds"));
    }
    let mut table = ResultTable::new("bench", &columns);
    let _ = writeln!(stdout, "{:>8} {:>8} {}", "n", "removed", PHASES.map(|p| format!("{p:>17}")).join(""));
    for r in &rows {
        let mut cells = vec![r.n.into(), r.removed.into(), r.equivalent.into()];
        cells.extend(r.seconds.iter().map(|&t| t.into()));
        table.push(cells);
        let times: String = r.seconds.iter().map(|t| format!("{:>17}", format!("{:.3e}", t))).collect();
        let _ = writeln!(stdout, "{:>8} {:>8} {times}", r.n, r.removed);
    }
    out.write_table("bench.csv", &table)?;

    let slope = (rows.len() > 1).then(|| overhead_slope(&rows));
    if let Some(slope) = slope {
        let _ = writeln!(stdout, "overhead slope in n: {}", fmt_f64(slope));
    }
    let chart = LineChart {
        title: "phase timings".into(),
        x_label: "n".into(),
        y_label: "seconds".into(),
        log_x: true,
        log_y: true,
        series: PHASES
            .iter()
            .enumerate()
            .map(|(i, p)| Series { name: p.to_string(), points: rows.iter().map(|r| (r.n as f64, r.seconds[i], 0.0)).collect() })
            .collect(),
    };
    out.write_svg("bench.svg", &chart.to_svg())?;
    let equivalent = rows.iter().all(|r| r.equivalent);
    out.note(json!({"record": "summary", "overhead_slope": slope, "equivalent": equivalent}));
    out.finish()?;
    if !equivalent {
        let _ = writeln!(stdout, "VIOLATION: single-pass residual filter disagrees with the reference");
        return Ok(Status::Violation);
    }
    Ok(Status::Success)
}
