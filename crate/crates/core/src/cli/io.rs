//! CSV ingestion and output helpers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faer::Mat;
use log::warn;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::error::Error;

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// A numeric table read from CSV, with the header if one was detected.
pub struct RawTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

/// Reads a numeric CSV. The first record is treated as a header when any
/// of its fields fails to parse as a number.
pub fn read_table(path: &Path) -> Result<RawTable, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("{}: record {i}: {e}", path.display())))?;
        records.push(rec.iter().map(str::to_owned).collect::<Vec<String>>());
    }
    if records.is_empty() {
        return Err(CliError::Validation(format!("{} is empty", path.display())));
    }
    let header = if records[0].iter().any(|f| f.parse::<f64>().is_err()) {
        Some(records.remove(0))
    } else {
        None
    };
    let width = header.as_ref().map_or(records.first().map_or(0, Vec::len), Vec::len);
    let mut rows = Vec::with_capacity(records.len());
    let mut bad = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let parsed: Option<Vec<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(r) if r.len() == width => rows.push(r),
            _ => bad.push(i),
        }
    }
    if !bad.is_empty() {
        return Err(Error::validation(
            format!("{}: rows with non-numeric fields or {width} != field count", path.display()),
            bad,
        )
        .into());
    }
    Ok(RawTable { header, rows })
}

/// Resolves `--response` as a header name first, then as a 0-based index.
pub fn response_column(table: &RawTable, spec: &str) -> Result<usize, CliError> {
    let width = table.header.as_ref().map_or(table.rows.first().map_or(0, Vec::len), Vec::len);
    if let Some(h) = &table.header {
        if let Some(j) = h.iter().position(|c| c == spec) {
            return Ok(j);
        }
    }
    match spec.parse::<usize>() {
        Ok(j) if j < width => Ok(j),
        Ok(j) => Err(CliError::Usage(format!("response index {j} out of range for {width} columns"))),
        Err(_) => Err(CliError::Usage(format!("no column named {spec:?}"))),
    }
}

/// Per-column centering and scaling from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    /// Sample mean and standard deviation; a constant column keeps `sd = 1`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        let mut sd = vec![1.0; p];
        for j in 0..p {
            mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
            let s = if rows.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
            if s > 0.0 {
                sd[j] = s;
            } else {
                warn!("column {j} is constant; centered but not scaled");
            }
        }
        Standardization { mean, sd }
    }

    pub fn apply(&self, rows: &mut [Vec<f64>]) {
        for r in rows {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
    }
}

pub const INTERCEPT_NAME: &str = "(intercept)";

/// Splits a table into feature rows and labels, checking the response is binary.
pub fn split_response(table: &RawTable, col: usize) -> Result<(Vec<Vec<f64>>, Vec<u8>, Vec<String>), CliError> {
    let mut bad = Vec::new();
    let mut y = Vec::with_capacity(table.rows.len());
    let mut feats = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        match r[col] {
            v if v == 0.0 => y.push(0),
            v if v == 1.0 => y.push(1),
            _ => {
                bad.push(i);
                continue;
            }
        }
        feats.push(r.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, &v)| v).collect());
    }
    if !bad.is_empty() {
        return Err(Error::validation("response values must be 0 or 1", bad).into());
    }
    let width = table.rows.first().map_or(0, Vec::len);
    let names = match &table.header {
        Some(h) => h.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, s)| s.clone()).collect(),
        None => (0..width).filter(|&j| j != col).enumerate().map(|(k, _)| format!("x{}", k + 1)).collect(),
    };
    Ok((feats, y, names))
}

pub fn rows_to_mat(rows: &[Vec<f64>], p: usize) -> Mat<f64> {
    Mat::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Buffered CSV writer over a file with a header line.
pub struct CsvOut {
    out: BufWriter<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut w = CsvOut {
            out: BufWriter::new(file),
        };
        w.row(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), CliError> {
        let line = fields.into_iter().map(|f| quote(&f)).collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

fn quote(f: &str) -> String {
    if f.contains([',', '"', '\n']) {
        format!("\"{}\"", f.replace('"', "\"\""))
    } else {
        f.to_owned()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
