//! Plain numeric CSV tables. Floats are written with Rust's shortest
//! round-trip formatting, so a write/read cycle is bit-exact.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn write_table<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    };
    w.write_record(header.iter().map(|h| h.as_ref()))
        .map_err(wrap)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("row {}: bad number {f:?}", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != header.len() {
            return Err(Error::parse(
                path,
                format!("row {} has {} fields", line + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// One row per time sample: `t` followed by the column `x[:, k]`.
pub fn write_time_series<S: AsRef<str>>(
    path: &Path,
    header: &[S],
    times: &[f64],
    x: &DMatrix<f64>,
) -> Result<()> {
    let rows: Vec<Vec<f64>> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = Vec::with_capacity(x.nrows() + 1);
            row.push(t);
            row.extend(x.column(k).iter());
            row
        })
        .collect();
    write_table(path, header, &rows)
}

/// Inverse of [`write_time_series`]; returns the header, times, and the
/// `n x m` matrix of the remaining columns.
pub fn read_time_series(path: &Path) -> Result<(Vec<String>, Vec<f64>, DMatrix<f64>)> {
    let (header, rows) = read_table(path)?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::parse(path, "first column must be t"));
    }
    let m = rows.len();
    let n = header.len() - 1;
    let times = rows.iter().map(|r| r[0]).collect();
    let x = DMatrix::from_fn(n, m, |i, k| rows[k][i + 1]);
    Ok((header, times, x))
}
