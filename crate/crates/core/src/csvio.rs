//! Frame-indexed numeric CSV files.
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is exact and repeated writes are byte-identical.

use std::path::Path;

use emoc_autodiff::Tensor;

use crate::error::{CoreError, Result};
use crate::facemodel::{Coeff3dmm, COEFF_DIM};

/// Writes `frame,<columns...>` with one row per tensor row.
pub fn write_frames(path: &Path, columns: &[String], rows: &Tensor) -> Result<()> {
    if columns.len() != rows.cols() {
        return Err(CoreError::Dimension(format!(
            "{} column names for {} columns",
            columns.len(),
            rows.cols()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["frame".to_string()];
    header.extend_from_slice(columns);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in 0..rows.rows() {
        let mut rec = vec![r.to_string()];
        rec.extend(rows.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Reads a file written by [`write_frames`]; returns the value columns.
pub fn read_frames(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        return Err(CoreError::parse(path, "no value columns"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != header.len() + 1 {
            return Err(CoreError::parse(
                path,
                format!("row {i} has {} fields", rec.len()),
            ));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| CoreError::parse(path, format!("row {i}: bad number {field:?}")))?;
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CoreError::parse(path, "no rows"));
    }
    let cols = header.len();
    Ok((header, Tensor::matrix(n, cols, data)))
}

pub fn write_coeffs(path: &Path, stream: &[Coeff3dmm]) -> Result<()> {
    let data: Vec<f64> = stream.iter().flat_map(|c| c.to_vec()).collect();
    let header = Coeff3dmm::csv_header();
    write_frames(
        path,
        &header[1..],
        &Tensor::matrix(stream.len(), COEFF_DIM, data),
    )
}

pub fn read_coeffs(path: &Path) -> Result<Vec<Coeff3dmm>> {
    let (header, t) = read_frames(path)?;
    if header.len() != COEFF_DIM {
        return Err(CoreError::parse(
            path,
            format!("{} coefficient columns, expected {COEFF_DIM}", header.len()),
        ));
    }
    (0..t.rows())
        .map(|r| Coeff3dmm::from_slice(t.row(r)))
        .collect()
}

/// Long format `frame,kp_id,x,y,z` for `[T, 3K]` point trajectories.
pub fn write_points3(path: &Path, rows: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["frame", "kp_id", "x", "y", "z"])
        .map_err(|e| csv_err(path, e))?;
    for r in 0..rows.rows() {
        for (k, p) in rows.row(r).chunks(3).enumerate() {
            w.write_record([
                r.to_string(),
                k.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn read_points3(path: &Path) -> Result<Tensor> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CoreError::parse(path, format!("row {i}, field {j}")))
        };
        let frame = num(0)? as usize;
        let kp = num(1)? as usize;
        if frame == frames.len() {
            frames.push(Vec::new());
        }
        let row = frames
            .get_mut(frame)
            .filter(|row| row.len() == 3 * kp)
            .ok_or_else(|| CoreError::parse(path, format!("row {i}: out-of-order point")))?;
        row.extend_from_slice(&[num(2)?, num(3)?, num(4)?]);
    }
    Tensor::from_rows(&frames).map_err(|e| CoreError::parse(path, e.to_string()))
}

fn csv_err(path: &Path, e: csv::Error) -> CoreError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CoreError::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        CoreError::parse(path, e.to_string())
    }
}
