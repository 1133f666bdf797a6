//! Plain-text and PGM export of 2-D grids.
//!
//! CSV grids are one row per line, comma separated, with values printed in
//! Rust's shortest round-trip form, so reading a file back yields the exact
//! same `f64`s. PGM files are binary `P5` with maxval 65535 (big-endian
//! samples); a sidecar `<file>.txt` records how values map to samples.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub fn grid_to_csv(grid: ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, grid: ArrayView2<f64>) -> Result<()> {
    write_atomic(path, grid_to_csv(grid).as_bytes())
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {n} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })
}

pub fn read_csv(path: &Path) -> Result<Array2<f64>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Encodes samples as a 16-bit binary PGM.
pub fn pgm16_bytes(samples: ArrayView2<u16>) -> Vec<u8> {
    let (h, w) = samples.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &s in samples.iter() {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Maps `lo..=hi` linearly onto `0..=65535`. A constant grid maps to 0.
pub fn quantize(grid: ArrayView2<f64>, lo: f64, hi: f64) -> Array2<u16> {
    let span = hi - lo;
    grid.mapv(|v| {
        if span <= 0.0 || !span.is_finite() {
            0
        } else {
            (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16
        }
    })
}

/// Writes a PGM normalized to the grid's own min/max, with a sidecar
/// holding `min=` and `max=`.
pub fn write_pgm_normalized(path: &Path, grid: ArrayView2<f64>) -> Result<()> {
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if grid.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    write_atomic(path, &pgm16_bytes(quantize(grid, lo, hi).view()))?;
    write_atomic(
        &sidecar(path),
        format!("min={lo:?}\nmax={hi:?}\nsample=(value-min)/(max-min)*65535\n").as_bytes(),
    )
}

/// Writes a PGM over a fixed value range with a sidecar recording it.
pub fn write_pgm_range(path: &Path, grid: ArrayView2<f64>, lo: f64, hi: f64) -> Result<()> {
    write_atomic(path, &pgm16_bytes(quantize(grid, lo, hi).view()))?;
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    write_atomic(
        &sidecar(path),
        format!("min={lo:?}\nmax={hi:?}\nscale={scale:?}\nsample=(value-min)*scale\n").as_bytes(),
    )
}

pub fn read_pgm16(path: &Path) -> Result<Array2<u16>> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Parse { line: 0, message: m.to_string() };
    // header: four whitespace separated tokens
    let mut tokens = Vec::new();
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(bad("not a 16-bit P5 PGM"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let data = &bytes[pos..];
    if data.len() != 2 * w * h {
        return Err(bad("PGM payload size mismatch"));
    }
    let samples = data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Array2::from_shape_vec((h, w), samples).map_err(|e| bad(&e.to_string()))
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

/// Writes through a `.partial` file renamed into place, so readers never
/// see a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
