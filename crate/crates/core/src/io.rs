//! On-disk formats.
//!
//! Snapshots are a 32-byte header followed by `n^d` little-endian
//! `(re, im)` pairs of `f64`:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"RNLSPSI1"
//! 8       4     d      u32
//! 12      4     n      u32
//! 16      8     L      f64
//! 24      8     time   f64
//! ```
//!
//! Tables are CSV with a header row. Floats use Rust's shortest round-trip
//! formatting so equal values always produce equal bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::averaged::AveragedDensityMatrix;
use crate::grid::{SpatialGrid, WaveField};
use crate::propagator::SampleScalars;
use crate::spectral::{EigenAnalysis, KbScan};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"RNLSPSI1";
pub const SNAPSHOT_HEADER_BYTES: usize = 32;

pub fn write_snapshot(mut w: impl Write, psi: &WaveField, t: f64) -> Result<()> {
    let grid = psi.grid();
    let mut header = Vec::with_capacity(SNAPSHOT_HEADER_BYTES);
    header.extend_from_slice(&SNAPSHOT_MAGIC);
    header.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    header.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    header.extend_from_slice(&grid.length().to_le_bytes());
    header.extend_from_slice(&t.to_le_bytes());
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(16 * grid.len());
    for c in psi.values() {
        body.extend_from_slice(&c.re.to_le_bytes());
        body.extend_from_slice(&c.im.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_snapshot(mut r: impl Read) -> Result<(WaveField, f64)> {
    let mut header = [0u8; SNAPSHOT_HEADER_BYTES];
    r.read_exact(&mut header)?;
    if header[..8] != SNAPSHOT_MAGIC {
        return Err(Error::InvalidArgument("not a snapshot file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let grid = SpatialGrid::new(u32_at(8) as usize, u32_at(12) as usize, f64_at(16))?;
    let t = f64_at(24);
    let mut body = vec![0u8; 16 * grid.len()];
    r.read_exact(&mut body)?;
    let values = body
        .chunks_exact(16)
        .map(|b| {
            Complex64::new(
                f64::from_le_bytes(b[..8].try_into().unwrap()),
                f64::from_le_bytes(b[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((WaveField::new(grid, values)?, t))
}

pub fn save_snapshot(path: &Path, psi: &WaveField, t: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, psi, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<(WaveField, f64)> {
    read_snapshot(BufReader::new(File::open(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

/// Writes a header row and numeric rows.
pub fn write_table(w: impl Write, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::LengthMismatch { expected: header.len(), actual: row.len() });
        }
        out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn names(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub const SCALAR_COLUMNS: [&str; 6] = ["t", "l2", "suml2linf", "energy_kinetic", "energy_potential", "energy_hartree"];

pub fn write_scalars_csv(w: impl Write, scalars: &[SampleScalars]) -> Result<()> {
    write_table(
        w,
        &names(&SCALAR_COLUMNS),
        scalars.iter().map(|s| vec![s.t, s.l2, s.sum_norm, s.energy.kinetic, s.energy.potential, s.energy.hartree]),
    )
}

/// One row per `(t, y)`: `t, y, ρ(x₀), …, ρ(x_{n−1})`.
pub fn write_density_csv(w: impl Write, t: &[f64], density: &[Vec<Vec<f64>>]) -> Result<()> {
    let n = density.first().and_then(|d| d.first()).map_or(0, Vec::len);
    let mut header = names(&["t", "y"]);
    header.extend((0..n).map(|i| format!("rho_{i}")));
    let rows = t.iter().zip(density).flat_map(|(&t, states)| {
        states.iter().enumerate().map(move |(y, rho)| {
            let mut row = vec![t, y as f64];
            row.extend_from_slice(rho);
            row
        })
    });
    write_table(w, &header, rows)
}

/// `t, trace, diagonal_imag, hermiticity, min_eig_0, …`.
pub fn write_trace_csv(w: impl Write, series: &[AveragedDensityMatrix]) -> Result<()> {
    let m = series.first().map_or(0, |f| f.states.len());
    let mut header = names(&["t", "trace", "diagonal_imag", "hermiticity"]);
    header.extend((0..m).map(|y| format!("min_eig_{y}")));
    let rows = series.iter().map(|f| {
        let tr = f.trace();
        let mut row = vec![f.t, tr.total, tr.diagonal_imag, f.hermiticity_defect()];
        row.extend(f.psd_check());
        row
    });
    write_table(w, &header, rows)
}

pub fn write_spectrum_csv(w: impl Write, analysis: &EigenAnalysis) -> Result<()> {
    write_table(
        w,
        &names(&["re", "im", "localization"]),
        analysis.eigenvalues.iter().zip(&analysis.localization).map(|(z, l)| vec![z.re, z.im, *l]),
    )
}

pub fn write_scan_csv(w: impl Write, scan: &KbScan) -> Result<()> {
    write_table(
        w,
        &names(&["re_lambda", "im_lambda", "min_singular_value", "regularized"]),
        scan.points
            .iter()
            .map(|p| vec![p.lambda.re, p.lambda.im, p.min_singular_value, if p.regularized { 1.0 } else { 0.0 }]),
    )
}

/// `(t, value)` pairs from a two-column CSV with a header row.
pub fn read_series_csv(r: impl Read) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(r).records() {
        let rec = rec.map_err(csv_err)?;
        let v = numbers(&rec)?;
        if v.len() < 2 {
            return Err(Error::InvalidArgument(format!("series row {:?} needs two columns", rec)));
        }
        rows.push((v[0], v[1]));
    }
    Ok(rows)
}

/// `(x, y)` pairs taken from two named columns of a CSV with a header row.
pub fn read_named_series_csv(r: impl Read, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h.trim() == name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "column {name:?} not found (have {})",
                header.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let (ix, iy) = (find(x)?, find(y)?);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let v = numbers(&rec.map_err(csv_err)?)?;
        rows.push((v[ix], v[iy]));
    }
    Ok(rows)
}

/// Square numeric matrix from a header-less CSV.
pub fn read_matrix_csv(r: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    for rec in reader.records() {
        rows.push(numbers(&rec.map_err(csv_err)?)?);
    }
    Ok(rows)
}

fn numbers(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter()
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}"))))
        .collect()
}

pub fn write_json(w: impl Write, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(w);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::InvalidArgument(format!("json: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
