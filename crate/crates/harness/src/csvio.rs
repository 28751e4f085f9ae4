//! Dataset CSV files: a header `x1,...,xd,y` followed by one row per sample.

use crate::error::{HarnessError, Result};
use dpols_core::Dataset;
use std::io::{Read, Write};
use std::path::Path;

/// Shortest representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn header_for(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())).collect()
}

/// Reads a dataset, reporting the line and column of the first problem.
pub fn parse_dataset<R: Read>(reader: R, source_name: &str) -> Result<Dataset> {
    let err = |line: u64, column: usize, message: String| HarnessError::Parse {
        source_name: source_name.to_string(),
        line,
        column,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(csv_error(e, source_name)),
        None => return Err(err(1, 1, "empty file; expected header x1,...,xd,y".into())),
    };
    let width = header.len();
    if width < 2 {
        return Err(err(1, 1, "header needs at least one covariate column and y".into()));
    }
    let d = width - 1;
    for (c, (got, want)) in header.iter().zip(header_for(d)).enumerate() {
        if got != want {
            return Err(err(1, c + 1, format!("expected column `{want}`, found `{got}`")));
        }
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(e, source_name))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(err(line, record.len().min(width) + 1, format!("expected {width} fields, found {}", record.len())));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(line, c + 1, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(err(line, c + 1, format!("`{field}` is not finite")));
            }
            if c < d {
                x.push(v);
            } else {
                y.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(err(2, 1, "no data rows".into()));
    }
    Ok(Dataset::new(x, y, d)?)
}

fn csv_error(e: csv::Error, source_name: &str) -> HarnessError {
    let line = e.position().map_or(0, |p| p.line());
    HarnessError::Parse { source_name: source_name.to_string(), line, column: 1, message: e.to_string() }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn dataset_to_string(data: &Dataset) -> String {
    let mut out = header_for(data.d()).join(",");
    out.push('\n');
    for (row, y) in data.rows().zip(data.y()) {
        for v in row {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&fmt_f64(*y));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(dataset_to_string(data).as_bytes()).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_dataset(text.as_bytes(), "mem")
    }

    #[test]
    fn floats_round_trip_bitwise() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 5e-324, 1.7976931348623157e308, 123456.789, -0.0, 1e16, 4e-6] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn dataset_round_trip() {
        let data = Dataset::new(vec![0.1, 1e-9, -2.5, 3.0], vec![1.0 / 7.0, -4.0], 2).unwrap();
        let back = parse(&dataset_to_string(&data)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn malformed_cell_is_located() {
        match parse("x1,x2,y\n1,2,3\n4,abc,6\n") {
            Err(HarnessError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        match parse("x1,x2,y\n1,2\n") {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("x1,z,y\n1,2,3\n") {
            Err(HarnessError::Parse { line, column, .. }) => assert_eq!((line, column), (1, 2)),
            other => panic!("{other:?}"),
        }
        assert!(parse("").is_err());
        assert!(parse("x1,y\n").is_err());
        assert!(parse("x1,y\ninf,1\n").is_err());
    }
}
