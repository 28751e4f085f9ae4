use crate::config::{key, KeySpec, Params};
use crate::csvio::{fmt_f64, read_dataset};
use crate::error::{HarnessError, Result, Status};
use crate::output::RunOutput;
use crate::table::ResultTable;
use dpols_core::{estimate_sigma_squared, RngStream, SigmaConfig, SigmaOutcome};
use std::io::Write;
use std::path::Path;

pub const KEYS: &[KeySpec] = &[
    key("eps0", Some("1"), "privacy parameter of the histogram"),
    key("delta0", Some("0.001"), "privacy parameter of the histogram"),
    key("zeta", Some("0.05"), "target failure probability"),
    key("c1", Some("8"), "block-count constant: k' = floor(c1 ln(1/(delta0 zeta)) / eps0)"),
];

const COLUMNS: &[(&str, &str)] = &[
    ("seed", "root seed"),
    ("n", "rows in the input"),
    ("d", "covariates"),
    ("eps0", "histogram epsilon"),
    ("delta0", "histogram delta"),
    ("zeta", "failure probability"),
    ("blocks", "number of blocks k'"),
    ("block_size", "rows per block"),
    ("outcome", "estimate or bottom"),
    ("bin", "index m of the released bin [2^(m/4), 2^((m+1)/4)); empty for the zero bin"),
    ("sigma2", "released left edge"),
];

pub fn config(params: &Params) -> Result<SigmaConfig> {
    let mut cfg = SigmaConfig::new(params.require("eps0")?, params.require("delta0")?, params.require("zeta")?);
    cfg.c1 = params.require("c1")?;
    cfg.validate().map_err(|e| HarnessError::usage(e.to_string()))?;
    if cfg.block_count() == 0 {
        return Err(HarnessError::usage("these parameters give zero blocks"));
    }
    Ok(cfg)
}

pub fn run(input: &Path, params: &Params, stdout: &mut dyn Write) -> Result<Status> {
    let cfg = config(params)?;
    let data = read_dataset(input)?;
    let blocks = cfg.block_count();
    let block_size = data.n() / blocks;
    if block_size <= data.d() {
        return Err(HarnessError::usage(format!(
            "{} rows give blocks of {block_size} rows, but each of the {blocks} blocks needs more than d = {}",
            data.n(),
            data.d()
        )));
    }
    let seed = params.seed()?;
    let mut out = RunOutput::create("sigma", params)?;
    let outcome = estimate_sigma_squared(&data, &cfg, &mut RngStream::new(seed))?;
    let _ = writeln!(stdout, "blocks = {blocks} of {block_size} rows");

    let mut table = ResultTable::new("sigma", COLUMNS);
    let (status, label, bin, edge) = match outcome {
        SigmaOutcome::Estimate { left_edge, bin_index } => {
            let _ = writeln!(stdout, "sigma2 = {}", fmt_f64(left_edge));
            (Status::Success, "estimate", bin_index, Some(left_edge))
        }
        SigmaOutcome::Bottom => {
            let _ = writeln!(stdout, "BOTTOM: no histogram bin survived the noisy threshold");
            (Status::DefinedFailure, "bottom", None, None)
        }
    };
    table.push(vec![
        seed.into(),
        data.n().into(),
        data.d().into(),
        cfg.eps0.into(),
        cfg.delta0.into(),
        cfg.zeta.into(),
        blocks.into(),
        block_size.into(),
        label.into(),
        bin.into(),
        edge.into(),
    ]);
    out.write_table("sigma.csv", &table)?;
    out.finish()?;
    Ok(status)
}
