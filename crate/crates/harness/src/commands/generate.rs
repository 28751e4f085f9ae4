use super::{design, model_spec, MODEL_KEYS};
use crate::config::{key, KeySpec, Params};
use crate::design::draw;
use crate::error::{HarnessError, Result, Status};
use crate::output::RunOutput;
use dpols_core::dp::split_seed;
use dpols_core::{make_adjacent, AdjacentMode, RngStream};
use serde_json::json;
use std::io::Write;

pub fn keys() -> Vec<KeySpec> {
    let mut keys = vec![
        key("n", Some("1000"), "number of rows"),
        key("adjacent", None, "also write a neighbouring dataset: resample, leverage-outlier or residual-outlier"),
        key("i_star", Some("0"), "row replaced in the neighbouring dataset"),
        key("magnitude", Some("50"), "outlier size for the neighbouring dataset"),
    ];
    keys.extend(MODEL_KEYS);
    keys
}

pub fn run(params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let n = params.positive_count("n")?;
    let kappa: f64 = params.require("kappa")?;
    let seed = params.seed()?;
    let spec = model_spec(params, n, kappa, split_seed(seed, 0))?;
    let data = draw(design(params)?, &spec)?;
    let mut out = RunOutput::create("generate", params)?;
    let path = out.write_dataset("data.csv", &data)?;
    let _ = writeln!(stdout, "wrote {} rows to {}", data.n(), path.display());

    if let Some(mode) = params.raw("adjacent") {
        let mode = AdjacentMode::parse(mode).ok_or_else(|| {
            HarnessError::usage(format!("unknown adjacent mode `{mode}` (resample, leverage-outlier, residual-outlier)"))
        })?;
        let i_star: usize = params.require("i_star")?;
        if i_star >= n {
            return Err(HarnessError::usage(format!("i_star = {i_star} is out of range for n = {n}")));
        }
        let magnitude: f64 = params.require("magnitude")?;
        let mut rng = RngStream::new(split_seed(seed, 1));
        let pair = make_adjacent(&data, &spec, i_star, mode, magnitude, &mut rng)?;
        let path = out.write_dataset("variant.csv", &pair.variant)?;
        out.note(json!({"record": "adjacent", "mode": mode.name(), "i_star": i_star, "magnitude": magnitude}));
        let _ = writeln!(stdout, "wrote neighbouring dataset ({}, row {i_star}) to {}", mode.name(), path.display());
    }
    out.finish()?;
    Ok(Status::Success)
}
