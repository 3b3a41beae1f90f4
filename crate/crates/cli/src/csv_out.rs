//! CSV output: header row, LF line endings, numbers rounded to 12
//! significant digits and printed in their shortest form.

use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

#[derive(Debug)]
pub enum CsvError {
    Schema(String),
    NonFinite { row: usize, column: String },
    Io(std::io::Error),
}

impl std::fmt::Display for CsvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CsvError::Schema(s) => write!(f, "row does not match the CSV schema: {s}"),
            CsvError::NonFinite { row, column } => write!(f, "non-finite value in row {row}, column {column}"),
            CsvError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CsvError {}

/// `v` rounded to 12 significant digits, shortest round-trip form.
pub fn format_float(v: f64) -> Option<String> {
    if !v.is_finite() {
        return None;
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    Some(if rounded == 0.0 { "0".to_string() } else { rounded.to_string() })
}

/// Renders the whole table in memory; nothing is produced on error.
pub fn render_csv(header: &[&str], rows: &[Vec<Cell>]) -> Result<Vec<u8>, CsvError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(|e| CsvError::Schema(e.to_string()))?;
    for (r, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(CsvError::Schema(format!("row {r} has {} fields, header has {}", row.len(), header.len())));
        }
        let mut fields = Vec::with_capacity(row.len());
        for (cell, column) in row.iter().zip(header) {
            fields.push(match cell {
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) => {
                    format_float(*v).ok_or_else(|| CsvError::NonFinite { row: r, column: column.to_string() })?
                }
                Cell::Text(s) => s.clone(),
            });
        }
        w.write_record(&fields).map_err(|e| CsvError::Schema(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CsvError::Io(e.into_error()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<(), CsvError> {
    let bytes = render_csv(header, rows)?;
    std::fs::write(path, bytes).map_err(CsvError::Io)
}
