//! Dense design matrices and target vectors.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("matrix has {got} values, expected {rows} x {cols}")]
    BadLength { rows: usize, cols: usize, got: usize },
    #[error("expected {expected} column names, got {got}")]
    BadNames { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

/// Row-major dense matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if values.len() != rows * cols {
            return Err(DataError::BadLength { rows, cols, got: values.len() });
        }
        if column_names.len() != cols {
            return Err(DataError::BadNames { expected: cols, got: column_names.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Self { rows, cols, values, column_names })
    }

    /// Builds a matrix with generated names `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(DataError::BadLength { rows: rows.len(), cols, got: r.len() });
            }
            values.extend_from_slice(r);
        }
        let names = (0..cols).map(|j| format!("x{j}")).collect();
        Self::new(rows.len(), cols, values, names)
    }

    /// Single-feature matrix.
    pub fn column(xs: &[f64]) -> Result<Self, DataError> {
        Self::new(xs.len(), 1, xs.to_vec(), vec!["x0".to_string()])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// Overwrites one column. Values must be finite.
    pub fn set_column(&mut self, col: usize, data: &[f64]) -> Result<(), DataError> {
        if data.len() != self.rows {
            return Err(DataError::BadLength { rows: self.rows, cols: 1, got: data.len() });
        }
        if let Some(row) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row, col });
        }
        for (r, &v) in data.iter().enumerate() {
            self.values[r * self.cols + col] = v;
        }
        Ok(())
    }

    /// Rows picked by index, in the given order (duplicates allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
            column_names: self.column_names.clone(),
        }
    }

    /// Writes a CSV with a header row of column names.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(&self.column_names)?;
        for r in 0..self.rows {
            w.write_record(self.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Units of a target series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Natural log of the price.
    LogE,
    /// Price in currency units.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub values: Vec<f64>,
    pub scale: Scale,
}

impl TargetVector {
    pub fn new(values: Vec<f64>, scale: Scale) -> Self {
        Self { values, scale }
    }

    pub fn log(values: Vec<f64>) -> Self {
        Self::new(values, Scale::LogE)
    }

    pub fn raw(values: Vec<f64>) -> Self {
        Self::new(values, Scale::Raw)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self::new(idx.iter().map(|&i| self.values[i]).collect(), self.scale)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let header = match self.scale {
            Scale::LogE => "log_price",
            Scale::Raw => "price",
        };
        w.write_record([header])?;
        for v in &self.values {
            w.write_record([v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
