//! Output directory handling and the JSON-lines run manifest.

use crate::config::Params;
use crate::csvio::write_dataset;
use crate::error::{HarnessError, Result};
use crate::table::{ResultTable, SCHEMA_VERSION};
use dpols_core::Dataset;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.jsonl";

pub struct RunOutput {
    dir: PathBuf,
    plots: bool,
    records: Vec<Value>,
}

impl RunOutput {
    pub fn create(subcommand: &str, params: &Params) -> Result<Self> {
        let dir = PathBuf::from(params.raw("out").unwrap_or("dpols-out"));
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let seed = params.seed()?;
        let records = vec![
            json!({
                "record": "run",
                "subcommand": subcommand,
                "dpols_core": dpols_core::VERSION,
                "dpols_harness": env!("CARGO_PKG_VERSION"),
                "rng": "ChaCha20",
                "seed_split": "splitmix64(parent ^ splitmix64(index))",
            }),
            json!({ "record": "config", "values": params.entries() }),
            json!({ "record": "seed", "root": seed }),
        ];
        Ok(Self { dir, plots: params.flag("plots")?, records })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn plots(&self) -> bool {
        self.plots
    }

    pub fn note(&mut self, record: Value) {
        self.records.push(record);
    }

    pub fn write_table(&mut self, name: &str, table: &ResultTable) -> Result<PathBuf> {
        let path = self.path(name);
        table.write(&path)?;
        self.records.push(json!({
            "record": "output",
            "file": name,
            "kind": "table",
            "experiment": table.experiment,
            "schema_version": SCHEMA_VERSION,
            "rows": table.rows.len(),
        }));
        Ok(path)
    }

    pub fn write_dataset(&mut self, name: &str, data: &Dataset) -> Result<PathBuf> {
        let path = self.path(name);
        write_dataset(&path, data)?;
        self.records.push(json!({ "record": "output", "file": name, "kind": "dataset", "rows": data.n() }));
        Ok(path)
    }

    /// Writes the SVG only when plots were requested.
    pub fn write_svg(&mut self, name: &str, svg: &str) -> Result<Option<PathBuf>> {
        if !self.plots {
            return Ok(None);
        }
        let path = self.path(name);
        std::fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
        self.records.push(json!({ "record": "output", "file": name, "kind": "plot" }));
        Ok(Some(path))
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join(MANIFEST);
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}
