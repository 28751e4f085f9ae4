use super::{issp_config, PRIVACY_KEYS};
use crate::config::{KeySpec, Params};
use crate::csvio::{fmt_f64, read_dataset};
use crate::error::{Result, Status};
use crate::output::RunOutput;
use crate::table::ResultTable;
use dpols_core::issp::FailReason;
use dpols_core::{derived_constants, issp_fit, Outcome, RngStream};
use std::io::Write;
use std::path::Path;

pub const KEYS: &[KeySpec] = &PRIVACY_KEYS;

const COLUMNS: &[(&str, &str)] = &[
    ("seed", "root seed of the mechanism"),
    ("n", "rows in the input"),
    ("d", "covariates"),
    ("epsilon", "privacy epsilon"),
    ("delta", "privacy delta"),
    ("l0", "leverage threshold"),
    ("r0", "residual threshold"),
    ("k", "discretization parameter"),
    ("c2", "noise scale after the multiplier"),
    ("outcome", "estimate or fail"),
    ("fail_reason", "leverage-guard or gate when the outcome is fail"),
    ("coefficient", "1-based coefficient index"),
    ("beta", "released coefficient"),
    ("score1", "leverage-filter score (research mode only)"),
    ("score2", "residual-filter score (research mode only)"),
    ("v_l1", "total filtered weight (research mode only)"),
];

pub fn run(input: &Path, params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let cfg = issp_config(params)?;
    let data = read_dataset(input)?;
    let consts = derived_constants(cfg.epsilon, cfg.delta, cfg.l0, cfg.r0);
    let mut out = RunOutput::create("fit", params)?;

    let fit = issp_fit(&data, &cfg, &mut RngStream::new(cfg.seed))?;
    let say = |stdout: &mut dyn Write, line: String| {
        let _ = writeln!(stdout, "{line}");
    };
    say(stdout, format!("k = {}", fit.k));
    say(stdout, format!("c2 = {} (multiplier {})", fmt_f64(fit.c2), fmt_f64(cfg.noise_scale_override)));

    let status = match &fit.outcome {
        Outcome::Fail(FailReason::LeverageGuard) => {
            let kf = consts.k as f64;
            let mut broken = Vec::new();
            if !consts.discretization_guard {
                broken.push(format!("L0 <= 1/(96k) = {}", fmt_f64(1.0 / (96.0 * kf))));
            }
            if !consts.privacy_guard {
                broken.push(format!(
                    "L0 <= 3 eps/(56 ln(12/delta)) = {}",
                    fmt_f64(3.0 * cfg.epsilon / (56.0 * (12.0 / cfg.delta).ln()))
                ));
            }
            say(stdout, format!("FAIL: leverage guard violated: L0 = {} breaks {}", fmt_f64(cfg.l0), broken.join(" and ")));
            Status::DefinedFailure
        }
        Outcome::Fail(FailReason::GateRejected) => {
            say(stdout, "FAIL: the propose-test-release gate rejected the stability scores".into());
            Status::DefinedFailure
        }
        Outcome::Estimate(beta) => {
            let parts: Vec<String> = beta.iter().map(|b| fmt_f64(*b)).collect();
            say(stdout, format!("beta = {}", parts.join(",")));
            Status::Success
        }
    };

    let diag = &fit.diagnostics;
    if !cfg.strict_privacy && fit.outcome != Outcome::Fail(FailReason::LeverageGuard) {
        say(stdout, "note: the diagnostics below are not covered by the privacy guarantee; --strict-privacy suppresses them".into());
        if let Some(s) = diag.score1 {
            say(stdout, format!("score1 = {s}"));
        }
        if let Some(s) = diag.score2 {
            say(stdout, format!("score2 = {}", fmt_f64(s)));
        }
        if let Some(v) = diag.v_l1 {
            say(stdout, format!("v_l1 = {}", fmt_f64(v)));
        }
        if let Some(r) = diag.reweights {
            say(stdout, format!("reweights = {r}"));
        }
        if let Some(msg) = &diag.singular {
            say(stdout, format!("singular: {msg}"));
        }
        let t = &fit.timings;
        say(
            stdout,
            format!(
                "time_ms leverage_filter={:.3} residual_filter={:.3} gate={:.3} release={:.3}",
                t.leverage_filter.as_secs_f64() * 1e3,
                t.residual_filter.as_secs_f64() * 1e3,
                t.gate.as_secs_f64() * 1e3,
                t.release.as_secs_f64() * 1e3
            ),
        );
    }

    let mut table = ResultTable::new("fit", COLUMNS);
    let (outcome, reason) = match &fit.outcome {
        Outcome::Estimate(_) => ("estimate", None),
        Outcome::Fail(FailReason::LeverageGuard) => ("fail", Some("leverage-guard")),
        Outcome::Fail(FailReason::GateRejected) => ("fail", Some("gate")),
    };
    let coefficients: Vec<(Option<usize>, Option<f64>)> = match &fit.outcome {
        Outcome::Estimate(b) => b.iter().enumerate().map(|(j, v)| (Some(j + 1), Some(*v))).collect(),
        Outcome::Fail(_) => vec![(None, None)],
    };
    for (j, b) in coefficients {
        table.push(vec![
            cfg.seed.into(),
            data.n().into(),
            data.d().into(),
            cfg.epsilon.into(),
            cfg.delta.into(),
            cfg.l0.into(),
            cfg.r0.into(),
            fit.k.into(),
            fit.c2.into(),
            outcome.into(),
            reason.into(),
            j.into(),
            b.into(),
            diag.score1.into(),
            diag.score2.into(),
            diag.v_l1.into(),
        ]);
    }
    let path = out.write_table("fit.csv", &table)?;
    say(stdout, format!("results: {}", path.display()));
    out.finish()?;
    Ok(status)
}
