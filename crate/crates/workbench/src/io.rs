//! Pattern CSV files with JSON sidecars, PGM images and small JSON helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use turing_core::grid::{GridSpec, Pattern, Provenance};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
}

pub const CSV_HEADER: &str = "x,y,u,v";

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.into(), source })?;
    }
    fs::write(path, bytes).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.into(), source })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.into(), source })
}

/// `pattern.csv` -> `pattern.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSidecar {
    pub grid: GridSpec,
    pub provenance: Option<Provenance>,
}

/// Formats a float so that parsing it back gives the same bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text for a pattern: header, then one row per node with `y` as the
/// outer loop, matching the row-major field layout.
pub fn pattern_to_csv(pattern: &Pattern) -> String {
    let g = pattern.grid();
    let mut s = String::with_capacity(g.len() * 100);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for i in 0..g.len() {
        let (x, y) = g.coords(i);
        let _ = writeln!(s, "{},{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(pattern.u()[i]), fmt_f64(pattern.v()[i]));
    }
    s
}

/// Parses pattern CSV text. The grid is recovered from the coordinates:
/// the row count before `y` first changes gives `nx`.
pub fn pattern_from_csv(text: &str, path: &Path) -> Result<Pattern, IoError> {
    let err = |line: usize, msg: String| IoError::Parse { path: path.into(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header `{CSV_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows: Vec<[f64; 4]> = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut row = [0.0f64; 4];
        let mut fields = line.split(',');
        for (k, slot) in row.iter_mut().enumerate() {
            let f = fields.next().ok_or_else(|| err(i + 1, format!("expected 4 fields, found {k}")))?;
            *slot = f.trim().parse().map_err(|e| err(i + 1, format!("field {}: {e}", k + 1)))?;
            if !slot.is_finite() {
                return Err(err(i + 1, format!("field {} is not finite", k + 1)));
            }
        }
        if fields.next().is_some() {
            return Err(err(i + 1, "more than 4 fields".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(2, "no data rows".into()));
    }
    let nx = rows.iter().position(|r| r[1] != rows[0][1]).unwrap_or(rows.len());
    if rows.len() % nx != 0 {
        return Err(err(rows.len() + 1, format!("{} rows do not form a grid with {nx} columns", rows.len())));
    }
    let ny = rows.len() / nx;
    let last = rows[rows.len() - 1];
    let grid = GridSpec::new(nx, ny, rows[0][0], rows[nx - 1][0], rows[0][1], last[1])
        .map_err(|e| IoError::Invalid { path: path.into(), msg: e.to_string() })?;
    let tol = 1e-9 * (grid.x_max() - grid.x_min()).max(grid.y_max() - grid.y_min());
    for (i, r) in rows.iter().enumerate() {
        let (x, y) = grid.coords(i);
        if (r[0] - x).abs() > tol || (r[1] - y).abs() > tol {
            return Err(err(i + 2, format!("coordinates ({}, {}) are off the grid, expected ({x}, {y})", r[0], r[1])));
        }
    }
    let u = rows.iter().map(|r| r[2]).collect();
    let v = rows.iter().map(|r| r[3]).collect();
    Pattern::new(grid, u, v).map_err(|e| IoError::Invalid { path: path.into(), msg: e.to_string() })
}

/// Writes the CSV and its provenance sidecar.
pub fn write_pattern(path: &Path, pattern: &Pattern) -> Result<(), IoError> {
    write_bytes(path, pattern_to_csv(pattern).as_bytes())?;
    let sidecar = PatternSidecar { grid: *pattern.grid(), provenance: pattern.provenance.clone() };
    write_json(&sidecar_path(path), &sidecar)
}

/// Reads a pattern CSV, attaching provenance from its sidecar when present.
pub fn read_pattern(path: &Path) -> Result<Pattern, IoError> {
    let mut pattern = pattern_from_csv(&read_text(path)?, path)?;
    let side = sidecar_path(path);
    if side.exists() {
        let s: PatternSidecar = read_json(&side)?;
        if s.grid != *pattern.grid() {
            log::warn!("{}: sidecar grid differs from the CSV coordinates, ignoring it", side.display());
        } else {
            pattern.provenance = s.provenance;
        }
    }
    Ok(pattern)
}

/// Normalization bounds of one rendered field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderBounds {
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

/// Binary greyscale PGM of a row-major field, min-max scaled to 0..255.
/// Row 0 of the image is the top, i.e. the largest `y`.
pub fn field_to_pgm(field: &[f64], nx: usize, ny: usize) -> (Vec<u8>, RenderBounds) {
    let (min, max) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let constant = !(max > min);
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let x = field[iy * nx + ix];
            let px = if constant { 128 } else { (255.0 * (x - min) / (max - min)).round() as u8 };
            out.push(px);
        }
    }
    (out, RenderBounds { min, max, constant })
}
