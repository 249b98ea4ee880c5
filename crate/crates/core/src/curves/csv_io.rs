//! CSV formats for curves and scalar responses.
//!
//! Curves: the first row is `t,<t_1>,...,<t_T>`; every following row is
//! `<index>,<x(t_1)>,...,<x(t_T)>`. Rows holding exactly `T` cells (no index)
//! are also accepted. Responses: a single column with header `y`.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{CurveSet, Grid};

fn parse<T: Scalar>(cell: &str, source: &str, row: usize) -> Result<T> {
    T::from_str_radix(cell.trim(), 10)
        .map_err(|_| Error::csv(source, format!("row {row}: cannot parse number {cell:?}")))
}

pub fn read_curves<T: Scalar, R: Read>(reader: R, source: &str) -> Result<CurveSet<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::csv(source, "empty file"))?
        .map_err(|e| Error::csv(source, e.to_string()))?;
    if header.get(0).map(str::trim) != Some("t") {
        return Err(Error::csv(source, "first row must start with the header cell \"t\""));
    }
    let points = header
        .iter()
        .skip(1)
        .map(|c| parse::<T>(c, source, 1))
        .collect::<Result<Vec<_>>>()?;
    let grid = Arc::new(Grid::new(points).map_err(|e| Error::csv(source, e.to_string()))?);
    let width = grid.len();
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::csv(source, e.to_string()))?;
        let row = k + 2;
        let skip = match rec.len() {
            n if n == width + 1 => 1,
            n if n == width => 0,
            n => {
                return Err(Error::csv(
                    source,
                    format!("row {row} has {n} cells, expected {} (or {width})", width + 1),
                ))
            }
        };
        let values = rec
            .iter()
            .skip(skip)
            .map(|c| parse::<T>(c, source, row))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::csv(source, format!("row {row} has a non-finite value")));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::csv(source, "no curve rows"));
    }
    CurveSet::new(grid, rows)
}

pub fn write_curves<T: Scalar, W: Write>(set: &CurveSet<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::csv("<output>", e.to_string());
    let mut header = vec!["t".to_string()];
    header.extend(set.grid().points().iter().map(|p| p.to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for (i, c) in set.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(c.values().iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn read_responses<T: Scalar, R: Read>(reader: R, source: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(source, e.to_string()))?;
    if headers.len() != 1 || headers.get(0).map(str::trim) != Some("y") {
        return Err(Error::csv(source, "responses need a single column with header \"y\""));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(source, e.to_string()))?;
        let v: T = parse(&rec[0], source, k + 2)?;
        if !v.is_finite() {
            return Err(Error::csv(source, format!("row {} is not finite", k + 2)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::csv(source, "no responses"));
    }
    Ok(out)
}

pub fn write_responses<T: Scalar, W: Write>(y: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::csv("<output>", e.to_string());
    w.write_record(["y"]).map_err(csv_err)?;
    for v in y {
        w.write_record([v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn read_curves_file<T: Scalar>(path: impl AsRef<Path>) -> Result<CurveSet<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_curves(file, &path.display().to_string())
}

pub fn read_responses_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_responses(file, &path.display().to_string())
}
