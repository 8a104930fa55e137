//! CSV and JSON files of the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use rsae_core::dynamics::TimeSeries;
use rsae_core::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Column headers `prefix1..prefixN`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Writes a matrix with a header row. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_matrix(path: &Path, header: &[String], m: &Tensor) -> CliResult<()> {
    if header.len() != m.cols() {
        return Err(CliError::io(path, format!("{} headers for {} columns", header.len(), m.cols())));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    let mut row = Vec::with_capacity(m.cols());
    for r in 0..m.rows() {
        row.clear();
        row.extend(m.row(r).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a headed numeric CSV into a matrix, returning the headers too.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CliError::io(path, format!("line {}: '{field}' is not a number", i + 2)))?;
            data.push(v);
        }
        rows += 1;
    }
    let m = Tensor::matrix(rows, header.len(), data).map_err(|e| CliError::io(path, e))?;
    Ok((header, m))
}

pub fn write_vector(path: &Path, name: &str, v: &[f64]) -> CliResult<()> {
    write_matrix(path, &[name.to_string()], &Tensor::matrix(v.len(), 1, v.to_vec()).expect("column vector"))
}

pub fn read_vector(path: &Path) -> CliResult<Vec<f64>> {
    let (h, m) = read_matrix(path)?;
    if h.len() != 1 {
        return Err(CliError::io(path, format!("expected one column, found {}", h.len())));
    }
    Ok(m.into_data())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Files of one time series: `t.csv`, `<stem>.csv` and `<stem>_dx.csv`
/// (plus `<stem>_ddx.csv` when present). The stem `x` uses `dx.csv` and
/// `ddx.csv` instead.
pub struct SeriesFiles<'a> {
    pub dir: &'a Path,
    pub stem: &'a str,
    pub prefix: &'a str,
}

impl SeriesFiles<'_> {
    fn path(&self, suffix: &str) -> PathBuf {
        match (self.stem, suffix) {
            ("x", "_dx") => self.dir.join("dx.csv"),
            ("x", "_ddx") => self.dir.join("ddx.csv"),
            _ => self.dir.join(format!("{}{suffix}.csv", self.stem)),
        }
    }

    pub fn write(&self, s: &TimeSeries) -> CliResult<()> {
        write_vector(&self.dir.join("t.csv"), "t", &s.t)?;
        let header = numbered(self.prefix, s.dim());
        write_matrix(&self.path(""), &header, &s.x)?;
        if let Some(dx) = &s.dx {
            write_matrix(&self.path("_dx"), &numbered(&format!("d{}", self.prefix), s.dim()), dx)?;
        }
        if let Some(ddx) = &s.ddx {
            write_matrix(&self.path("_ddx"), &numbered(&format!("dd{}", self.prefix), s.dim()), ddx)?;
        }
        Ok(())
    }

    pub fn read(&self) -> CliResult<TimeSeries> {
        let t = read_vector(&self.dir.join("t.csv"))?;
        let (_, x) = read_matrix(&self.path(""))?;
        let optional = |suffix: &str| -> CliResult<Option<Tensor>> {
            let p = self.path(suffix);
            if p.exists() {
                Ok(Some(read_matrix(&p)?.1))
            } else {
                Ok(None)
            }
        };
        let dx = optional("_dx")?;
        let ddx = optional("_ddx")?;
        TimeSeries::new(t, x, dx, ddx).map_err(|e| CliError::io(self.path(""), e))
    }
}
