//! Small CSV writers for matrices and cost traces, used to dump factors,
//! filters and spectrograms for plotting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes a matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_matrix(&mut out, m, |v| v).map_err(|e| Error::io(path, e))
}

/// Writes a matrix converted to decibels (`20*log10`) with values clamped to
/// `floor_db` below the matrix maximum; handy for filters whose leading taps
/// dwarf the tail.
pub fn write_matrix_csv_db(path: impl AsRef<Path>, m: &Array2<f64>, floor_db: f64) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let peak = m.iter().cloned().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    write_matrix(&mut out, m, |v| {
        let db = 20.0 * (v.max(f64::MIN_POSITIVE) / peak).log10();
        db.max(floor_db)
    })
    .map_err(|e| Error::io(path, e))
}

fn write_matrix<W: Write>(
    out: &mut W,
    m: &Array2<f64>,
    f: impl Fn(f64) -> f64,
) -> std::io::Result<()> {
    for row in m.rows() {
        let mut first = true;
        for &v in row {
            if !first {
                write!(out, ",")?;
            }
            write!(out, "{}", f(v))?;
            first = false;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes an `iteration,cost` trace.
pub fn write_cost_trace_csv(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    (|| {
        writeln!(out, "iteration,cost")?;
        for (i, c) in trace.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, c)?;
        }
        Ok(())
    })()
    .map_err(|e: std::io::Error| Error::io(path, e))
}
