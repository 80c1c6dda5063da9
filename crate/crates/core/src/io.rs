//! CSV and JSON input and output.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, Terminator, WriterBuilder};
use nalgebra::DMatrix;

use crate::data::{DataSet, MixtureParams};
use crate::error::{Error, Result};

/// Column names plus the parsed data.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub data: DataSet,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field.eq_ignore_ascii_case("na") || field.eq_ignore_ascii_case("nan")
}

/// Reads a numeric CSV with a header row. Empty fields and `NA` or `NaN`
/// in any case are missing.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Parse("missing header row".into()));
    }
    let p = headers.len();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut n = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            if is_missing(field) {
                values.push(f64::NAN);
                observed.push(false);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse(format!("row {}, column {}: {field:?} is not a number", i + 1, j + 1)))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: j });
                }
                values.push(v);
                observed.push(true);
            }
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::DegenerateDimensions(format!("{n} data rows, at least 2 needed")));
    }
    let data = DataSet::new(DMatrix::from_row_slice(n, p, &values), DMatrix::from_row_slice(n, p, &observed))?;
    Ok(Table { headers, data })
}

pub fn read_table_path(path: &Path) -> Result<Table> {
    read_table(File::open(path)?)
}

/// 17 significant digits in scientific notation; empty for NaN.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(w)
}

/// Writes a real matrix under `headers`; NaN entries become empty fields.
pub fn write_matrix<W: Write>(w: W, headers: &[String], m: &DMatrix<f64>) -> Result<()> {
    check_width(headers, m.ncols())?;
    let mut wtr = writer(w);
    wtr.write_record(headers)?;
    for i in 0..m.nrows() {
        wtr.write_record((0..m.ncols()).map(|j| format_value(m[(i, j)])))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes a data set with missing cells as empty fields.
pub fn write_dataset<W: Write>(w: W, headers: &[String], data: &DataSet) -> Result<()> {
    let m = DMatrix::from_fn(data.n(), data.p(), |i, j| if data.is_observed(i, j) { data.value(i, j) } else { f64::NAN });
    write_matrix(w, headers, &m)
}

/// Writes a binary matrix as 0/1 fields.
pub fn write_bool_matrix<W: Write>(w: W, headers: &[String], m: &DMatrix<bool>) -> Result<()> {
    check_width(headers, m.ncols())?;
    let mut wtr = writer(w);
    wtr.write_record(headers)?;
    for i in 0..m.nrows() {
        wtr.write_record((0..m.ncols()).map(|j| if m[(i, j)] { "1" } else { "0" }))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes arbitrary string rows under `headers`.
pub fn write_rows<W: Write, I, R>(w: W, headers: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wtr = writer(w);
    wtr.write_record(headers)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn check_width(headers: &[String], p: usize) -> Result<()> {
    if headers.len() != p {
        return Err(Error::LengthMismatch { left: headers.len(), right: p });
    }
    Ok(())
}

/// Default column names `x1..xp`.
pub fn default_headers(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn read_params<R: Read>(reader: R) -> Result<MixtureParams> {
    let params: MixtureParams = serde_json::from_reader(reader)?;
    params.validate()?;
    Ok(params)
}

pub fn write_params<W: Write>(w: W, params: &MixtureParams) -> Result<()> {
    serde_json::to_writer_pretty(w, params)?;
    Ok(())
}
