//! CSV datasets: a header row, then `x1..xm, y1..yd` per row, in stream order.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    /// Per input dimension minimum and maximum over all rows.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Parses a dataset from any reader. Rows and columns in errors are 1-based, header excluded.
pub fn read_dataset<R: std::io::Read>(reader: R, input_dim: usize, output_dim: usize) -> Result<Dataset> {
    let width = input_dim + output_dim;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_len = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .len();
    if header_len != width {
        return Err(Error::Schema(format!(
            "header has {header_len} columns, expected {width} ({input_dim} inputs + {output_dim} outputs)"
        )));
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut lower = vec![f64::INFINITY; input_dim];
    let mut upper = vec![f64::NEG_INFINITY; input_dim];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != width {
            return Err(Error::Schema(format!("row {row} has {} columns, expected {width}", rec.len())));
        }
        let mut values = Vec::with_capacity(width);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value `{cell}`"),
                });
            }
            values.push(v);
        }
        let y = values.split_off(input_dim);
        for (j, &v) in values.iter().enumerate() {
            lower[j] = lower[j].min(v);
            upper[j] = upper[j].max(v);
        }
        inputs.push(values);
        outputs.push(y);
    }
    Ok(Dataset {
        inputs,
        outputs,
        lower,
        upper,
    })
}

pub fn load_dataset(path: &Path, input_dim: usize, output_dim: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, input_dim, output_dim)
}

/// Writes `inputs`/`outputs` in the format [`read_dataset`] accepts.
pub fn write_dataset<W: std::io::Write>(writer: W, inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<()> {
    let m = inputs.first().map_or(0, Vec::len);
    let d = outputs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = (1..=m).map(|i| format!("x{i}")).chain((1..=d).map(|j| format!("y{j}"))).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (x, y) in inputs.iter().zip(outputs) {
        let row: Vec<String> = x.iter().chain(y).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}
