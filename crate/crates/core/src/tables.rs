//! Delimited-text exports.
//!
//! Floats are written in Rust's shortest round-trip form, so the same numbers
//! always produce the same bytes.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feature_store::write_atomic;

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

/// Matrix with a header row of column ids and a leading column of row ids.
pub fn matrix_csv(
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    m: &DMatrix<f64>,
) -> Result<Vec<u8>> {
    if row_ids.len() != m.nrows() || col_ids.len() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{} row / {} column labels for a {}x{} matrix",
            row_ids.len(),
            col_ids.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![corner.to_string()];
    header.extend(col_ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (r, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..m.ncols()).map(|c| m[(r, c)].to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

pub fn write_matrix_csv(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    write_atomic(path, &matrix_csv(corner, row_ids, col_ids, m)?)
}

/// Plain record table.
pub fn records_csv(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Dimension(format!(
                "record with {} fields under a {}-column header",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

pub fn write_records_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &records_csv(header, rows)?)
}

/// Parse a table written by [`matrix_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let col_ids: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut it = rec.iter();
        row_ids.push(it.next().unwrap_or_default().to_string());
        for v in it {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {v:?}")))?,
            );
        }
    }
    if values.len() != row_ids.len() * col_ids.len() {
        return Err(Error::SizeMismatch(format!(
            "{}: ragged table",
            path.display()
        )));
    }
    let m = DMatrix::from_row_slice(row_ids.len(), col_ids.len(), &values);
    Ok((row_ids, col_ids, m))
}
