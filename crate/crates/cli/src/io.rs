//! CSV input and output.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), every file has a
//! header row and rows end in `\n`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mfgp_core::model::ObservationBlock;

use crate::error::{CliError, Result};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) => format_number(*v),
            Cell::Text(t) => t.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// Column names `{prefix}1..{prefix}D`.
pub fn coord_header(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<Cell>]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let err = |e: csv::Error| CliError::usage(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row.iter().map(Cell::render)).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Numeric table with its column count taken from the header. A file with
/// no bytes at all gives `(None, [])`.
fn read_table(path: &Path) -> Result<(Option<usize>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.trim().is_empty() {
        return Ok((None, Vec::new()));
    }
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let ncols = r
        .headers()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        .len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncols {
            return Err(CliError::usage(format!(
                "{}:{line}: expected {ncols} columns, found {}",
                path.display(),
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(i, field)| {
                field.parse::<f64>().map_err(|_| {
                    CliError::usage(format!(
                        "{}:{line}: column {}: malformed number `{field}`",
                        path.display(),
                        i + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((Some(ncols), rows))
}

/// Observation file with columns `x_1..x_D, y`.
pub fn read_observations(path: &Path) -> Result<ObservationBlock> {
    let (ncols, rows) = read_table(path)?;
    let ncols =
        ncols.ok_or_else(|| CliError::usage(format!("{}: missing header row", path.display())))?;
    if ncols < 2 {
        return Err(CliError::usage(format!(
            "{}: observation files need columns x_1..x_D, y",
            path.display()
        )));
    }
    let dim = ncols - 1;
    let mut x = Vec::with_capacity(rows.len() * dim);
    let mut y = Vec::with_capacity(rows.len());
    for r in rows {
        x.extend_from_slice(&r[..dim]);
        y.push(r[dim]);
    }
    Ok(ObservationBlock::new(dim, x, y)?)
}

/// Point file with columns `x_1..x_D`. The dimension is `None` for an empty
/// file.
pub fn read_points(path: &Path) -> Result<(Option<usize>, Vec<Vec<f64>>)> {
    read_table(path)
}

/// Observation block as CSV rows.
pub fn write_observations(path: &Path, block: &ObservationBlock) -> Result<()> {
    let mut header = coord_header("x_", block.dim());
    header.push("y".into());
    let rows: Vec<Vec<Cell>> = block
        .points()
        .zip(block.values())
        .map(|(x, y)| {
            x.iter()
                .map(|v| Cell::Num(*v))
                .chain([Cell::Num(*y)])
                .collect()
        })
        .collect();
    write_csv(path, &header, &rows)
}
