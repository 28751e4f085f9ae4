//! Long-format result tables.
//!
//! On disk a table is a block of `#` header lines (format marker, schema
//! version, experiment id, one documentation line per column) followed by a
//! CSV body. [`ResultTable::parse`] reads back exactly what
//! [`ResultTable::to_text`] writes.

use crate::csvio::fmt_f64;
use crate::error::{HarnessError, Result};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "# dpols result table";

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => fmt_f64(*f),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }
}

macro_rules! cell_from_int {
    ($($t:ty),*) => {$(
        impl From<$t> for Cell {
            fn from(v: $t) -> Self { Cell::Int(v as i64) }
        }
    )*};
}
cell_from_int!(i32, i64, u32, usize);

impl From<u64> for Cell {
    // seeds use the full u64 range, so keep them textual
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub experiment: String,
    pub columns: Vec<Column>,
    /// Rendered cells; empty string means no value.
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn new(experiment: &str, columns: &[(&str, &str)]) -> Self {
        Self {
            experiment: experiment.to_string(),
            columns: columns.iter().map(|(n, d)| Column { name: n.to_string(), doc: d.to_string() }).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.columns.len(), "row width must match the columns of {}", self.experiment);
        self.rows.push(cells.iter().map(Cell::render).collect());
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn value(&self, row: usize, name: &str) -> Option<&str> {
        let c = self.column_index(name)?;
        self.rows.get(row).map(|r| r[c].as_str()).filter(|v| !v.is_empty())
    }

    pub fn f64(&self, row: usize, name: &str) -> Option<f64> {
        self.value(row, name)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\n# schema_version: {SCHEMA_VERSION}\n# experiment: {}\n", self.experiment);
        for c in &self.columns {
            out.push_str(&format!("# column {}: {}\n", c.name, c.doc));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory flush")).expect("csv output is utf-8"));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| HarnessError::Parse {
            source_name: source_name.to_string(),
            line: line as u64,
            column: 1,
            message,
        };
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(err(1, "not a dpols result table".into())),
        }
        let mut schema = None;
        let mut experiment = None;
        let mut docs = Vec::new();
        let mut body_start = 1;
        while let Some(&(i, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix("# ") else { break };
            if let Some(v) = rest.strip_prefix("schema_version: ") {
                schema = Some(v.trim().parse::<u32>().map_err(|_| err(i + 1, format!("bad schema version `{v}`")))?);
            } else if let Some(v) = rest.strip_prefix("experiment: ") {
                experiment = Some(v.to_string());
            } else if let Some(v) = rest.strip_prefix("column ") {
                let (name, doc) = v.split_once(": ").ok_or_else(|| err(i + 1, "bad column line".into()))?;
                docs.push(Column { name: name.to_string(), doc: doc.to_string() });
            } else {
                return Err(err(i + 1, format!("unrecognized header line `{l}`")));
            }
            body_start = i + 1;
            lines.next();
        }
        match schema {
            Some(SCHEMA_VERSION) => {}
            Some(v) => return Err(err(2, format!("unsupported schema version {v}"))),
            None => return Err(err(2, "missing schema version".into())),
        }
        let experiment = experiment.ok_or_else(|| err(3, "missing experiment id".into()))?;
        let body: String = text.lines().skip(body_start).map(|l| format!("{l}\n")).collect();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| err(body_start + 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() != docs.len() || header.iter().zip(&docs).any(|(h, c)| *h != c.name) {
            return Err(err(body_start + 1, "column header does not match the documented columns".into()));
        }
        let mut rows = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| err(body_start + 2 + r, e.to_string()))?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(Self { experiment, columns: docs, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut t = ResultTable::new("demo", &[("trial", "trial index"), ("err", "error, a, b"), ("note", "free text")]);
        t.push(vec![0usize.into(), 0.1.into(), "plain".into()]);
        t.push(vec![1usize.into(), Cell::Empty, "with, comma \"quoted\"".into()]);
        t.push(vec![2usize.into(), 1e-300.into(), Option::<f64>::None.into()]);
        t
    }

    #[test]
    fn writes_and_reads_back() {
        let t = sample();
        let back = ResultTable::parse(&t.to_text(), "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.f64(0, "err"), Some(0.1));
        assert_eq!(back.value(1, "err"), None);
        assert_eq!(back.f64(2, "err"), Some(1e-300));
    }

    #[test]
    fn rejects_other_schema_versions() {
        let text = sample().to_text().replace("schema_version: 1", "schema_version: 2");
        assert!(ResultTable::parse(&text, "mem").is_err());
        assert!(ResultTable::parse("trial,err\n1,2\n", "mem").is_err());
    }
}
